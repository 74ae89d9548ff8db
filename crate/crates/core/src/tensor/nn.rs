use std::sync::Arc;

use super::{Real, Tensor};
use crate::error::{Result, RsmError};

/// `gain * x / sqrt(mean(x^2) + eps)` over the trailing axis.
pub fn rms_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(RsmError::Config("rms_norm eps must be positive".into()));
    }
    x.rms_norm_impl(gain, eps)
}

/// `(silu(x W_gate) * (x W_up)) W_down`
pub fn swiglu_ffn<T: Real>(
    x: &Tensor<T>,
    w_gate: &Tensor<T>,
    w_up: &Tensor<T>,
    w_down: &Tensor<T>,
) -> Result<Tensor<T>> {
    let gate = x.matmul(w_gate)?;
    let up = x.matmul(w_up)?;
    gate.silu_mul(&up)?.matmul(w_down)
}

/// SwiGLU MLP applied along the token axis of `x: [B, S, d]`; the weights
/// are `[S, f]`, `[S, f]`, `[f, S]` and so fix the sequence length.
pub fn token_mix_ffn<T: Real>(
    x: &Tensor<T>,
    w_gate: &Tensor<T>,
    w_up: &Tensor<T>,
    w_down: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(RsmError::shape("token_mix_ffn", format!("input {:?}", x.shape())));
    }
    let seq = x.shape()[1];
    if w_gate.rank() != 2 || w_gate.shape()[0] != seq {
        return Err(RsmError::Config(format!(
            "token-mixing weights built for sequence length {}, input has {seq}",
            w_gate.shape().first().copied().unwrap_or(0)
        )));
    }
    let xt = x.swap_adjacent(1)?;
    swiglu_ffn(&xt, w_gate, w_up, w_down)?.swap_adjacent(1)
}

/// Rotary angle tables for a fixed list of positions.
#[derive(Clone, Debug)]
pub struct RopeTable<T: Real> {
    cos: Arc<Vec<T>>,
    sin: Arc<Vec<T>>,
    seq: usize,
    half: usize,
}

impl<T: Real> RopeTable<T> {
    pub fn new(positions: &[usize], head_dim: usize, base: f64) -> Result<Self> {
        if !head_dim.is_multiple_of(2) {
            return Err(RsmError::Config(format!(
                "rotary embedding needs an even head dimension, got {head_dim}"
            )));
        }
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for &p in positions {
            for i in 0..half {
                let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
                let angle = p as f64 * freq;
                cos.push(T::from_f64(angle.cos()).unwrap());
                sin.push(T::from_f64(angle.sin()).unwrap());
            }
        }
        Ok(RopeTable {
            cos: Arc::new(cos),
            sin: Arc::new(sin),
            seq: positions.len(),
            half,
        })
    }

    pub fn len(&self) -> usize {
        self.seq
    }

    pub fn is_empty(&self) -> bool {
        self.seq == 0
    }

    pub fn head_dim(&self) -> usize {
        2 * self.half
    }

    /// Rotates `x: [.., S, h, d_h]`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let r = x.rank();
        if r < 3 || x.shape()[r - 3] != self.seq || x.shape()[r - 1] != 2 * self.half {
            return Err(RsmError::shape(
                "rope",
                format!(
                    "input {:?} for table of {} positions, head dim {}",
                    x.shape(),
                    self.seq,
                    2 * self.half
                ),
            ));
        }
        let outer = x.shape()[..r - 3].iter().product();
        let mid = x.shape()[r - 2];
        x.rope_impl(&self.cos, &self.sin, outer, self.seq, mid, self.half)
    }
}

/// Applies the same rotary table to queries and keys.
pub fn rope_rotate<T: Real>(q: &Tensor<T>, k: &Tensor<T>, table: &RopeTable<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((table.apply(q)?, table.apply(k)?))
}

/// Non-causal multi-head self-attention over `x: [B, S, d]`.
///
/// `w_qkv` is `[d, 3d]` (query, key, value column blocks in that order),
/// `w_out` is `[d, d]`. Scores are scaled by `1/sqrt(d_h)`; there is no mask.
pub fn attention<T: Real>(
    x: &Tensor<T>,
    w_qkv: &Tensor<T>,
    w_out: &Tensor<T>,
    n_heads: usize,
    rope: Option<&RopeTable<T>>,
) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(RsmError::shape("attention", format!("input {:?}", x.shape())));
    }
    let (b, s, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if n_heads == 0 || d % n_heads != 0 {
        return Err(RsmError::Config(format!(
            "hidden size {d} is not divisible into {n_heads} heads"
        )));
    }
    let dh = d / n_heads;
    let qkv = x.matmul(w_qkv)?;
    let split = |i: usize| -> Result<Tensor<T>> { qkv.narrow(2, i * d, d)?.reshape(&[b, s, n_heads, dh]) };
    let (mut q, mut k, v) = (split(0)?, split(1)?, split(2)?);
    if let Some(table) = rope {
        (q, k) = rope_rotate(&q, &k, table)?;
    }
    let heads_first = |t: &Tensor<T>| -> Result<Tensor<T>> { t.swap_adjacent(1)?.reshape(&[b * n_heads, s, dh]) };
    let (q, k, v) = (heads_first(&q)?, heads_first(&k)?, heads_first(&v)?);
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let probs = q.bmm(&k, true)?.scale(scale)?.softmax_last()?;
    let out = probs
        .bmm(&v, false)?
        .reshape(&[b, n_heads, s, dh])?
        .swap_adjacent(1)?
        .reshape(&[b, s, d])?;
    out.matmul(w_out)
}

/// Mean token cross-entropy over positions whose target is not
/// `ignore_label`. With no such positions the loss is 0 and so is its
/// gradient.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize], ignore_label: usize) -> Result<Tensor<T>> {
    logits.cross_entropy_impl(targets, ignore_label)
}
