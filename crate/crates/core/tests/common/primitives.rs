//! Finite-difference checks for every differentiable primitive.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsm_core::tensor::{attention, cross_entropy, rms_norm, swiglu_ffn, token_mix_ffn, RopeTable};
use rsm_core::{Real, Result, Tensor};

use super::gradcheck::{check, random_tensor, GradFn, Precision};

pub const F32_STEP: f64 = 1e-4;
pub const F32_TOL: f64 = 1e-3;
pub const F64_STEP: f64 = 1e-4;
pub const F64_TOL: f64 = 1e-6;

/// Outcome of one check: pass flag and a human-readable summary.
pub type Outcome = (bool, String);

fn both<F: GradFn>(shapes: &[&[usize]], f: F) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s, 1.0)).collect();
    let r32 = check(&xs, Precision::F32, F32_STEP, F32_TOL, &f);
    let r64 = check(&xs, Precision::F64, F64_STEP, F64_TOL, &f);
    let ok = r32.passes(F32_TOL) && r64.passes(F64_TOL);
    (
        ok,
        format!(
            "f32 rel {:.2e} (tol {F32_TOL:.0e}), f64 rel {:.2e} (tol {F64_TOL:.0e})",
            r32.max_frobenius(),
            r64.max_frobenius()
        ),
    )
}

fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).unwrap()
}

macro_rules! primitives {
    ($($name:ident, $shapes:expr, |$x:ident| $body:expr;)+) => {
        $(
            pub fn $name() -> Outcome {
                struct F;
                impl GradFn for F {
                    fn eval<T: Real>(&self, $x: &[Tensor<T>]) -> Result<Tensor<T>> {
                        $body
                    }
                }
                both($shapes, F)
            }
        )+

        pub const ALL: &[(&str, fn() -> Outcome)] = &[$((stringify!($name), $name)),+];
    };
}

primitives! {
    matmul, &[&[3, 4], &[4, 2]], |x| x[0].matmul(&x[1]);
    matmul_t, &[&[2, 3, 4], &[5, 4]], |x| x[0].matmul_t(&x[1]);
    bmm, &[&[2, 3, 4], &[2, 4, 2]], |x| x[0].bmm(&x[1], false);
    bmm_t, &[&[2, 3, 4], &[2, 5, 4]], |x| x[0].bmm(&x[1], true);
    mul_scale, &[&[2, 3], &[2, 3]], |x| x[0].mul(&x[1])?.scale(real(1.5));
    add_broadcast, &[&[2, 3, 4], &[3, 4]], |x| x[0].add_broadcast(&x[1]);
    softmax, &[&[3, 5]], |x| x[0].softmax_last();
    swap_axes, &[&[2, 3, 4, 2]], |x| x[0].swap_adjacent(1);
    narrow_concat, &[&[2, 5, 3], &[2, 2, 3]], |x| {
        let a = x[0].narrow(1, 1, 3)?;
        Tensor::concat(&[&x[1], &a], 1)
    };
    embedding, &[&[4, 3]], |x| Tensor::embedding(&x[0], &[2, 0, 2, 3]);
    rms_norm_gain, &[&[3, 6], &[6]], |x| rms_norm(&x[0], &x[1], real(1e-6));
    swiglu, &[&[2, 3, 4], &[4, 6], &[4, 6], &[6, 4]], |x| swiglu_ffn(&x[0], &x[1], &x[2], &x[3]);
    token_mix, &[&[1, 5, 3], &[5, 8], &[5, 8], &[8, 5]], |x| token_mix_ffn(&x[0], &x[1], &x[2], &x[3]);
    rope, &[&[2, 4, 2, 6]], |x| {
        let table = RopeTable::new(&[0, 1, 2, 3], 6, 10000.0)?;
        table.apply(&x[0])
    };
    attention_plain, &[&[1, 3, 4], &[4, 12], &[4, 4]], |x| attention(&x[0], &x[1], &x[2], 2, None);
    attention_rope, &[&[2, 3, 4], &[4, 12], &[4, 4]], |x| {
        let table = RopeTable::new(&[0, 1, 2], 2, 10000.0)?;
        attention(&x[0], &x[1], &x[2], 2, Some(&table))
    };
    softmax_cross_entropy, &[&[2, 3, 5]], |x| cross_entropy(&x[0], &[0, 4, 2, 7, 1, 3], 7);
}
