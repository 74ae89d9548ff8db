//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An independent ChaCha stream for `(seed, stream)`; used to give every
/// instance, epoch or step its own generator so results do not depend on
/// scheduling or on how far a run got before it was resumed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
