//! Central finite-difference oracle for tape gradients.
//!
//! Derivatives use the fourth-order central stencil
//! `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
//!
//! The scalar probed is `sum(f(inputs) * R)` for a fixed random `R`. The
//! difference quotient is always evaluated through an f64 forward pass, so
//! a 32-bit analytic gradient is judged against an oracle whose own
//! rounding noise sits well below the tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsm_core::{Real, Result, Tape, Tensor};

/// A function of several tensors that can run at either precision.
pub trait GradFn {
    fn eval<T: Real>(&self, xs: &[Tensor<T>]) -> Result<Tensor<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Per input: fraction of entries within tolerance.
    pub within: Vec<f64>,
    /// Per input: ||analytic - fd|| / ||fd||.
    pub frobenius: Vec<f64>,
    pub worst_entry: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.within.iter().all(|&w| w >= 0.95) && self.frobenius.iter().all(|&f| f < tol)
    }

    pub fn max_frobenius(&self) -> f64 {
        self.frobenius.iter().copied().fold(0.0, f64::max)
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    Tensor::new(shape, data).unwrap()
}

fn projected(out: &Tensor<f64>, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(v, w)| v * w).sum()
}

fn analytic<T: Real, F: GradFn>(inputs: &[Tensor<T>], r: &[f64], f: &F) -> Vec<Vec<f64>> {
    let tape = Tape::<T>::new();
    let leaves: Vec<Tensor<T>> = inputs.iter().map(|t| tape.watch(t)).collect();
    let out = f.eval(&leaves).expect("forward");
    assert_eq!(out.numel(), r.len());
    let r_t = Tensor::new(out.shape(), r.iter().map(|&v| T::from_f64(v).unwrap()).collect()).unwrap();
    let loss = out.mul(&r_t).unwrap().sum().unwrap();
    let grads = tape.backward(&loss).expect("backward");
    leaves
        .iter()
        .map(|l| grads.get(l).unwrap().iter().map(|v| v.to_f64().unwrap()).collect())
        .collect()
}

/// Compares tape gradients of `f` at `inputs` (taken at `precision`)
/// against central differences with the given step and relative tolerance.
pub fn check<F: GradFn>(inputs: &[Tensor<f64>], precision: Precision, step: f64, tol: f64, f: &F) -> GradReport {
    // Evaluate everything at the point representable in the analytic precision.
    let point: Vec<Tensor<f64>> = match precision {
        Precision::F64 => inputs.to_vec(),
        Precision::F32 => inputs.iter().map(|t| t.cast::<f32>().cast::<f64>()).collect(),
    };
    let out_len = f.eval(&point).expect("forward").numel();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let analytic = match precision {
        Precision::F64 => analytic(&point, &r, f),
        Precision::F32 => {
            let narrow: Vec<Tensor<f32>> = point.iter().map(|t| t.cast()).collect();
            analytic(&narrow, &r, f)
        }
    };

    let mut within = Vec::new();
    let mut frobenius = Vec::new();
    let mut worst: f64 = 0.0;
    for (idx, input) in point.iter().enumerate() {
        let mut fd = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let x = input.data()[i];
            let eval = |v: f64| {
                let mut vals: Vec<Tensor<f64>> = point.to_vec();
                let mut d = input.to_vec();
                d[i] = v;
                vals[idx] = Tensor::new(input.shape(), d).unwrap();
                projected(&f.eval(&vals).expect("forward"), &r)
            };
            let near = eval(x + step) - eval(x - step);
            let far = eval(x + 2.0 * step) - eval(x - 2.0 * step);
            fd.push((8.0 * near - far) / (12.0 * step));
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (scale * 1e-2).max(1e-12);
        let mut ok = 0usize;
        let (mut diff2, mut ref2) = (0.0, 0.0);
        for (a, b) in analytic[idx].iter().zip(&fd) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(floor);
            worst = worst.max(rel);
            if rel < tol {
                ok += 1;
            }
            diff2 += (a - b) * (a - b);
            ref2 += b * b;
        }
        within.push(if fd.is_empty() {
            1.0
        } else {
            ok as f64 / fd.len() as f64
        });
        frobenius.push(if ref2 == 0.0 {
            diff2.sqrt()
        } else {
            (diff2 / ref2).sqrt()
        });
    }
    GradReport {
        within,
        frobenius,
        worst_entry: worst,
    }
}
