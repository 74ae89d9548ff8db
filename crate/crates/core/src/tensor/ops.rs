use std::sync::Arc;

use super::real::{gemm, MatView};
use super::tape::{sigmoid, Op, Tape};
use super::{Real, Tensor};
use crate::error::{Result, RsmError};

/// Wraps a freshly computed output, checking finiteness and recording
/// `op` on the tape of whichever inputs carry one.
pub(super) fn record<T: Real>(
    name: &'static str,
    shape: Vec<usize>,
    data: Vec<T>,
    inputs: &[&Tensor<T>],
    op: impl FnOnce() -> Op<T>,
) -> Result<Tensor<T>> {
    if !data.iter().all(|v| v.is_finite()) {
        return Err(RsmError::NonFinite { op: name });
    }
    let mut tape: Option<Tape<T>> = None;
    let mut parents = Vec::with_capacity(inputs.len());
    for t in inputs {
        match &t.node {
            Some((tp, id)) => {
                match &tape {
                    Some(existing) if !existing.same(tp) => {
                        return Err(RsmError::Usage(format!("{name}: operands recorded on different tapes")));
                    }
                    Some(_) => {}
                    None => tape = Some(tp.clone()),
                }
                parents.push(Some(*id));
            }
            None => parents.push(None),
        }
    }
    let out = Tensor {
        shape,
        data: Arc::new(data),
        node: None,
    };
    Ok(match tape {
        None => out,
        Some(tp) => {
            let id = tp.push(op(), parents, out.numel());
            out.with_node(tp, id)
        }
    })
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(RsmError::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// `(outer, axis_len, inner)` around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| a + b).collect();
        record("add", self.shape.clone(), data, &[self, other], || Op::Add)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| a * b).collect();
        record("mul", self.shape.clone(), data, &[self, other], || Op::Mul {
            a: Arc::clone(&self.data),
            b: Arc::clone(&other.data),
        })
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        let data = self.data.iter().map(|&a| a * c).collect();
        record("scale", self.shape.clone(), data, &[self], || Op::Scale(c))
    }

    /// Adds `b` to every trailing block of `self` whose shape equals `b`'s.
    pub fn add_broadcast(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let k = b.rank();
        if k > self.rank() || self.shape[self.rank() - k..] != b.shape[..] {
            return Err(RsmError::shape(
                "add_broadcast",
                format!("{:?} + {:?}", self.shape, b.shape),
            ));
        }
        let cols = b.numel();
        let rows = if cols == 0 { 0 } else { self.numel() / cols };
        let mut data = self.data.as_ref().clone();
        for row in data.chunks_mut(cols.max(1)) {
            for (d, &v) in row.iter_mut().zip(b.data.iter()) {
                *d += v;
            }
        }
        record("add_broadcast", self.shape.clone(), data, &[self, b], || Op::AddRows {
            rows,
            cols,
        })
    }

    pub fn sum(&self) -> Result<Tensor<T>> {
        let s: T = self.data.iter().copied().sum();
        record("sum", vec![], vec![s], &[self], || Op::Sum)
    }

    /// `[.., m, k] x [k, n] -> [.., m, n]`
    pub fn matmul(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_impl(w, false)
    }

    /// `[.., m, k] x [n, k]^T -> [.., m, n]`
    pub fn matmul_t(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_impl(w, true)
    }

    fn matmul_impl(&self, w: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
        if self.rank() < 1 || w.rank() != 2 {
            return Err(RsmError::shape("matmul", format!("{:?} x {:?}", self.shape, w.shape)));
        }
        let k = *self.shape.last().unwrap();
        let (wk, n) = if trans_b {
            (w.shape[1], w.shape[0])
        } else {
            (w.shape[0], w.shape[1])
        };
        if k != wk {
            return Err(RsmError::shape(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape, w.shape),
            ));
        }
        let m = if k == 0 {
            self.shape[..self.rank() - 1].iter().product()
        } else {
            self.numel() / k
        };
        let mut out = vec![T::zero(); m * n];
        let bv = if trans_b {
            MatView::row_major(n, k).t()
        } else {
            MatView::row_major(k, n)
        };
        gemm(
            &self.data,
            MatView::row_major(m, k),
            &w.data,
            bv,
            T::zero(),
            &mut out,
            MatView::row_major(m, n),
        );
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        record("matmul", shape, out, &[self, w], || Op::MatMul {
            a: Arc::clone(&self.data),
            b: Arc::clone(&w.data),
            m,
            k,
            n,
            trans_b,
        })
    }

    /// Batched product over the leading axis: `[B, m, k] x [B, k, n]`, or
    /// `[B, m, k] x [B, n, k]^T` when `trans_b`.
    pub fn bmm(&self, other: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
        if self.rank() != 3 || other.rank() != 3 || self.shape[0] != other.shape[0] {
            return Err(RsmError::shape("bmm", format!("{:?} x {:?}", self.shape, other.shape)));
        }
        let (batch, m, k) = (self.shape[0], self.shape[1], self.shape[2]);
        let (ok, n) = if trans_b {
            (other.shape[2], other.shape[1])
        } else {
            (other.shape[1], other.shape[2])
        };
        if ok != k {
            return Err(RsmError::shape(
                "bmm",
                format!("inner dimensions differ: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let bv = if trans_b {
            MatView::row_major(n, k).t()
        } else {
            MatView::row_major(k, n)
        };
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                &self.data[i * m * k..(i + 1) * m * k],
                MatView::row_major(m, k),
                &other.data[i * k * n..(i + 1) * k * n],
                bv,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
                MatView::row_major(m, n),
            );
        }
        record("bmm", vec![batch, m, n], out, &[self, other], || Op::BatchMatMul {
            a: Arc::clone(&self.data),
            b: Arc::clone(&other.data),
            batch,
            m,
            k,
            n,
            trans_b,
        })
    }

    /// Swaps axes `axis` and `axis + 1`.
    pub fn swap_adjacent(&self, axis: usize) -> Result<Tensor<T>> {
        if axis + 1 >= self.rank() {
            return Err(RsmError::shape(
                "swap_adjacent",
                format!("axis {axis} of {:?}", self.shape),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let (x, y) = (self.shape[axis], self.shape[axis + 1]);
        let inner: usize = self.shape[axis + 2..].iter().product();
        let mut out = vec![T::zero(); self.numel()];
        for o in 0..outer {
            for i in 0..x {
                for j in 0..y {
                    let src = ((o * x + i) * y + j) * inner;
                    let dst = ((o * y + j) * x + i) * inner;
                    out[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(axis, axis + 1);
        record("swap_axes", shape, out, &[self], || Op::SwapAxes { outer, x, y, inner })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(RsmError::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape),
            ));
        }
        let (outer, axis_len, inner) = split_at_axis(&self.shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * axis_len + start) * inner;
            out.extend_from_slice(&self.data[s..s + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        record("narrow", shape, out, &[self], || Op::Narrow {
            outer,
            axis: axis_len,
            start,
            len,
            inner,
        })
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| RsmError::shape("concat", "no operands"))?;
        if axis >= first.rank() {
            return Err(RsmError::shape("concat", format!("axis {axis} of {:?}", first.shape)));
        }
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(RsmError::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", p.shape, first.shape),
                ));
            }
        }
        let (outer, _, inner) = split_at_axis(&first.shape, axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        record("concat", shape, out, parts, || Op::Concat { outer, lens, inner })
    }

    pub fn softmax_last(&self) -> Result<Tensor<T>> {
        let n = *self
            .shape
            .last()
            .ok_or_else(|| RsmError::shape("softmax", "scalar input"))?;
        let mut out = self.data.as_ref().clone();
        for row in out.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let saved = Arc::new(out.clone());
        record("softmax", self.shape.clone(), out, &[self], || Op::Softmax {
            out: saved,
            n,
        })
    }

    /// Forward-transparent cut: the result holds the same values but no
    /// gradient reaches `self` through it.
    pub fn stop_gradient(&self) -> Tensor<T> {
        let out = self.detached();
        match &self.node {
            Some((tape, _)) => {
                let id = tape.push(Op::Boundary, Vec::new(), out.numel());
                out.with_node(tape.clone(), id)
            }
            None => out,
        }
    }

    /// Row lookup `table[ids[i]]`; output shape `[ids.len(), cols]`.
    pub fn embedding(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
        if table.rank() != 2 {
            return Err(RsmError::shape("embedding", format!("table shape {:?}", table.shape)));
        }
        let (rows, cols) = (table.shape[0], table.shape[1]);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(RsmError::Data(format!(
                    "index {id} out of range for table of {rows} rows"
                )));
            }
            out.extend_from_slice(&table.data[id * cols..(id + 1) * cols]);
        }
        let idx = Arc::new(ids.to_vec());
        record("embedding", vec![ids.len(), cols], out, &[table], || Op::Gather {
            idx,
            cols,
        })
    }

    /// `silu(self) * up`, elementwise.
    pub fn silu_mul(&self, up: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("silu_mul", self, up)?;
        let data = self
            .data
            .iter()
            .zip(up.data.iter())
            .map(|(&g, &u)| g * sigmoid(g) * u)
            .collect();
        record("silu_mul", self.shape.clone(), data, &[self, up], || Op::SiluMul {
            gate: Arc::clone(&self.data),
            up: Arc::clone(&up.data),
        })
    }

    pub(super) fn rms_norm_impl(&self, gain: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let d = *self
            .shape
            .last()
            .ok_or_else(|| RsmError::shape("rms_norm", "scalar input"))?;
        if d == 0 || gain.shape != [d] {
            return Err(RsmError::shape(
                "rms_norm",
                format!("input {:?} with gain {:?}", self.shape, gain.shape),
            ));
        }
        let dn = T::from_usize(d).unwrap();
        let rows = self.numel() / d;
        let mut inv_rms = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data.chunks(d) {
            let ms: T = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let ir = T::one() / (ms + eps).sqrt();
            inv_rms.push(ir);
            out.extend(row.iter().zip(gain.data.iter()).map(|(&v, &g)| g * v * ir));
        }
        record("rms_norm", self.shape.clone(), out, &[self, gain], || Op::RmsNorm {
            x: Arc::clone(&self.data),
            gain: Arc::clone(&gain.data),
            inv_rms,
            d,
        })
    }

    /// Rotates channel pairs `(2i, 2i+1)` of a `[outer, seq, mid, 2*half]`
    /// tensor by the per-position angles tabulated in `cos`/`sin`
    /// (`[seq, half]`).
    pub(super) fn rope_impl(
        &self,
        cos: &Arc<Vec<T>>,
        sin: &Arc<Vec<T>>,
        outer: usize,
        seq: usize,
        mid: usize,
        half: usize,
    ) -> Result<Tensor<T>> {
        let dh = 2 * half;
        let mut out = vec![T::zero(); self.numel()];
        for o in 0..outer {
            for s in 0..seq {
                let tc = &cos[s * half..(s + 1) * half];
                let ts = &sin[s * half..(s + 1) * half];
                for h in 0..mid {
                    let base = ((o * seq + s) * mid + h) * dh;
                    for i in 0..half {
                        let x0 = self.data[base + 2 * i];
                        let x1 = self.data[base + 2 * i + 1];
                        out[base + 2 * i] = x0 * tc[i] - x1 * ts[i];
                        out[base + 2 * i + 1] = x0 * ts[i] + x1 * tc[i];
                    }
                }
            }
        }
        record("rope", self.shape.clone(), out, &[self], || Op::Rope {
            cos: Arc::clone(cos),
            sin: Arc::clone(sin),
            outer,
            seq,
            mid,
            half,
        })
    }

    pub(super) fn cross_entropy_impl(&self, targets: &[usize], ignore_label: usize) -> Result<Tensor<T>> {
        let vocab = *self
            .shape
            .last()
            .ok_or_else(|| RsmError::shape("cross_entropy", "scalar logits"))?;
        let rows = if vocab == 0 { 0 } else { self.numel() / vocab };
        if targets.len() != rows {
            return Err(RsmError::shape(
                "cross_entropy",
                format!("{} targets for logits {:?}", targets.len(), self.shape),
            ));
        }
        let mut probs = self.data.as_ref().clone();
        let mut resolved = Vec::with_capacity(rows);
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            let row = &mut probs[r * vocab..(r + 1) * vocab];
            if t == ignore_label {
                resolved.push(None);
                continue;
            }
            if t >= vocab {
                return Err(RsmError::Data(format!("target {t} outside vocabulary of {vocab}")));
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += (lse - row[t]).to_f64().unwrap();
            softmax_in_place(row);
            resolved.push(Some(t));
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        record(
            "cross_entropy",
            vec![],
            vec![T::from_f64(loss).unwrap()],
            &[self],
            || Op::CrossEntropy {
                probs,
                targets: resolved,
                vocab,
                count,
            },
        )
    }
}

pub(super) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}
