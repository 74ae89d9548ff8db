pub mod error;
pub mod kv;
pub mod model;
pub mod puzzles;
pub mod rng;
pub mod rollout;
pub mod tensor;
pub mod trainer;

pub use error::{Result, RsmError};
pub use model::{count_parameters, Latents, ModelConfig, ModelInput, Rsm};
pub use puzzles::{Dataset, Domain, TokenizedExample};
pub use tensor::{Gradients, Real, Tape, Tensor};
pub use trainer::{run_training, TrainConfig, Trainer};
