use std::collections::BTreeSet;
use std::sync::Arc;

use crate::model::{ParamKind, Weights};

/// Global L2 norm of all gradients, accumulated in f64.
pub fn global_norm(grads: &[Option<Vec<f32>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient by `clip_norm / norm` when the global norm
/// exceeds `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Option<Vec<f32>>], clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = (clip_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rate multiplier for row-sparse tables.
    pub sparse_lr_mult: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            sparse_lr_mult: 1.0,
        }
    }
}

/// Adam moments for every trainable parameter (empty for buffers).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// Updates applied since creation or the last full reset; drives bias
    /// correction.
    pub t: u64,
    pub params: AdamParams,
}

impl OptimizerState {
    pub fn new(weights: &Weights<f32>, params: AdamParams) -> Self {
        let zeros = |w: &Weights<f32>| {
            w.params
                .iter()
                .map(|p| {
                    if p.spec.kind.trainable() {
                        vec![0.0; p.data.len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect::<Vec<_>>()
        };
        OptimizerState {
            m: zeros(weights),
            v: zeros(weights),
            t: 0,
            params,
        }
    }

    /// One AdamW update with rate `lr`. Matrices get decoupled weight decay;
    /// gains do not. Row-sparse tables only update the rows listed in
    /// `touched_rows` (moments of other rows are left as they are).
    pub fn step(
        &mut self,
        weights: &mut Weights<f32>,
        grads: &[Option<Vec<f32>>],
        lr: f64,
        touched_rows: &BTreeSet<usize>,
    ) {
        self.t += 1;
        let AdamParams {
            beta1,
            beta2,
            eps,
            weight_decay,
            sparse_lr_mult,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in weights.params.iter_mut().enumerate() {
            let Some(g) = grads[i].as_ref() else { continue };
            let kind = p.spec.kind;
            if !kind.trainable() {
                continue;
            }
            let (lr, wd) = match kind {
                ParamKind::Matrix => (lr, weight_decay),
                ParamKind::Gain => (lr, 0.0),
                ParamKind::SparseRows => (lr * sparse_lr_mult, 0.0),
                ParamKind::Buffer => unreachable!(),
            };
            let data = Arc::make_mut(&mut p.data);
            let n = data.len();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut update = |j: usize| {
                let gj = g[j] as f64;
                let mj = beta1 * m[j] as f64 + (1.0 - beta1) * gj;
                let vj = beta2 * v[j] as f64 + (1.0 - beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let step = (mj / bc1) / ((vj / bc2).sqrt() + eps);
                let w = data[j] as f64;
                data[j] = (w - lr * (step + wd * w)) as f32;
            };
            if kind == ParamKind::SparseRows {
                let row = p.spec.shape[1..].iter().product::<usize>();
                for &r in touched_rows {
                    for j in r * row..(r + 1) * row {
                        update(j);
                    }
                }
            } else {
                for j in 0..n {
                    update(j);
                }
            }
        }
    }

    /// Multiplies every moment by `scale`. A zero scale is a full reset and
    /// also restarts bias correction.
    pub fn on_depth_transition(&mut self, scale: f64) {
        let s = scale as f32;
        for buf in self.m.iter_mut().chain(self.v.iter_mut()) {
            for x in buf.iter_mut() {
                *x *= s;
            }
        }
        if scale == 0.0 {
            self.t = 0;
        }
    }
}

/// `ema <- decay * ema + (1 - decay) * weights` for every parameter.
pub fn ema_update(ema: &mut Weights<f32>, weights: &Weights<f32>, decay: f64) {
    for (e, w) in ema.params.iter_mut().zip(&weights.params) {
        let data = Arc::make_mut(&mut e.data);
        for (x, &y) in data.iter_mut().zip(w.data.iter()) {
            *x = (decay * *x as f64 + (1.0 - decay) * y as f64) as f32;
        }
    }
}
