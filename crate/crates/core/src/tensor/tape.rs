use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use super::real::{gemm, MatView};
use super::{Real, Tensor};
use crate::error::{Result, RsmError};

pub(crate) type NodeId = usize;

/// A recorded primitive application together with whatever its backward
/// rule needs from the forward pass.
pub(crate) enum Op<T: Real> {
    Leaf,
    /// Output of `stop_gradient`: forward-transparent, never propagates.
    Boundary,
    Add,
    Mul {
        a: Arc<Vec<T>>,
        b: Arc<Vec<T>>,
    },
    Scale(T),
    /// `x[rows, cols] + b[cols]`
    AddRows {
        rows: usize,
        cols: usize,
    },
    Sum,
    MatMul {
        a: Arc<Vec<T>>,
        b: Arc<Vec<T>>,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    BatchMatMul {
        a: Arc<Vec<T>>,
        b: Arc<Vec<T>>,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    /// `[outer, x, y, inner] -> [outer, y, x, inner]`
    SwapAxes {
        outer: usize,
        x: usize,
        y: usize,
        inner: usize,
    },
    Narrow {
        outer: usize,
        axis: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    Concat {
        outer: usize,
        lens: Vec<usize>,
        inner: usize,
    },
    Softmax {
        out: Arc<Vec<T>>,
        n: usize,
    },
    RmsNorm {
        x: Arc<Vec<T>>,
        gain: Arc<Vec<T>>,
        inv_rms: Vec<T>,
        d: usize,
    },
    SiluMul {
        gate: Arc<Vec<T>>,
        up: Arc<Vec<T>>,
    },
    /// Pairwise rotation over layout `[outer, seq, mid, 2 * half]`.
    Rope {
        cos: Arc<Vec<T>>,
        sin: Arc<Vec<T>>,
        outer: usize,
        seq: usize,
        mid: usize,
        half: usize,
    },
    Gather {
        idx: Arc<Vec<usize>>,
        cols: usize,
    },
    CrossEntropy {
        probs: Vec<T>,
        targets: Vec<Option<usize>>,
        vocab: usize,
        count: usize,
    },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Boundary => "stop_gradient",
            Op::Add => "add",
            Op::Mul { .. } => "mul",
            Op::Scale(_) => "scale",
            Op::AddRows { .. } => "add_rows",
            Op::Sum => "sum",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::SwapAxes { .. } => "swap_axes",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
            Op::Softmax { .. } => "softmax",
            Op::RmsNorm { .. } => "rms_norm",
            Op::SiluMul { .. } => "silu_mul",
            Op::Rope { .. } => "rope",
            Op::Gather { .. } => "gather",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

pub(crate) struct Node<T: Real> {
    op: Op<T>,
    parents: Vec<Option<NodeId>>,
    numel: usize,
}

#[derive(Default)]
struct TapeInner<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Reverse-mode recording of primitive applications.
///
/// Tensors created through [`Tape::leaf`] require gradient; every primitive
/// that consumes at least one of them is appended to the tape. A tape is
/// single-threaded and meant to live for one forward/backward pass.
pub struct Tape<T: Real = f32> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Real> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> std::fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    /// Number of recorded nodes, leaves and boundaries included.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of nodes produced by `stop_gradient`.
    pub fn boundary_count(&self) -> usize {
        self.inner
            .borrow()
            .nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Boundary))
            .count()
    }

    /// Op names in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.inner.borrow().nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Registers a gradient-requiring leaf holding `data`.
    pub fn leaf(&self, shape: &[usize], data: Arc<Vec<T>>) -> Result<Tensor<T>> {
        let t = Tensor::from_arc(shape, data)?;
        let id = self.push(Op::Leaf, Vec::new(), t.numel());
        Ok(t.with_node(self.clone(), id))
    }

    /// Starts tracking `t` (its values are shared, not copied).
    pub fn watch(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(Op::Leaf, Vec::new(), t.numel());
        t.detached().with_node(self.clone(), id)
    }

    pub(crate) fn push(&self, op: Op<T>, parents: Vec<Option<NodeId>>, numel: usize) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, parents, numel });
        inner.nodes.len() - 1
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    ///
    /// Returns a gradient for every leaf on the tape; leaves the loss never
    /// reaches get zeros.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        if loss.numel() != 1 {
            return Err(RsmError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let Some((tape, loss_id)) = loss.node() else {
            return Err(RsmError::Usage("loss is not recorded on a tape".into()));
        };
        if !tape.same(self) {
            return Err(RsmError::Usage("loss belongs to a different tape".into()));
        }
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss_id] = Some(vec![T::one()]);

        for id in (0..=loss_id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backward_node(node, &g, &mut grads, nodes);
        }

        let mut leaves = HashMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = grads[id].take().unwrap_or_else(|| vec![T::zero(); node.numel]);
                leaves.insert(id, g);
            }
        }
        Ok(Gradients {
            tape: self.clone(),
            leaves,
        })
    }
}

/// Gradients of a scalar with respect to every leaf of a tape.
pub struct Gradients<T: Real = f32> {
    tape: Tape<T>,
    leaves: HashMap<NodeId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf tensor; `None` if `t` is not a leaf of this tape.
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        let (tape, id) = t.node()?;
        if !tape.same(&self.tape) {
            return None;
        }
        self.leaves.get(&id).map(Vec::as_slice)
    }

    pub fn take(&mut self, t: &Tensor<T>) -> Option<Vec<T>> {
        let (tape, id) = t.node()?;
        if !tape.same(&self.tape) {
            return None;
        }
        self.leaves.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

fn slot<'g, T: Real>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], id: NodeId) -> &'g mut Vec<T> {
    let numel = nodes[id].numel;
    grads[id].get_or_insert_with(|| vec![T::zero(); numel])
}

fn backward_node<T: Real>(node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>], nodes: &[Node<T>]) {
    let p = &node.parents;
    match &node.op {
        Op::Leaf | Op::Boundary => {}
        Op::Add => {
            for pid in p.iter().flatten() {
                for (s, &gv) in slot(grads, nodes, *pid).iter_mut().zip(g) {
                    *s += gv;
                }
            }
        }
        Op::Mul { a, b } => {
            if let Some(pa) = p[0] {
                for ((s, &gv), &bv) in slot(grads, nodes, pa).iter_mut().zip(g).zip(b.iter()) {
                    *s += gv * bv;
                }
            }
            if let Some(pb) = p[1] {
                for ((s, &gv), &av) in slot(grads, nodes, pb).iter_mut().zip(g).zip(a.iter()) {
                    *s += gv * av;
                }
            }
        }
        Op::Scale(c) => {
            if let Some(px) = p[0] {
                for (s, &gv) in slot(grads, nodes, px).iter_mut().zip(g) {
                    *s += *c * gv;
                }
            }
        }
        Op::AddRows { rows, cols } => {
            if let Some(px) = p[0] {
                for (s, &gv) in slot(grads, nodes, px).iter_mut().zip(g) {
                    *s += gv;
                }
            }
            if let Some(pb) = p[1] {
                let gb = slot(grads, nodes, pb);
                for r in 0..*rows {
                    for (s, &gv) in gb.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                        *s += gv;
                    }
                }
            }
        }
        Op::Sum => {
            if let Some(px) = p[0] {
                for s in slot(grads, nodes, px).iter_mut() {
                    *s += g[0];
                }
            }
        }
        Op::MatMul { a, b, m, k, n, trans_b } => {
            let (m, k, n) = (*m, *k, *n);
            let gv = MatView::row_major(m, n);
            let bv = if *trans_b {
                MatView::row_major(n, k).t()
            } else {
                MatView::row_major(k, n)
            };
            if let Some(pa) = p[0] {
                let ga = slot(grads, nodes, pa);
                gemm(g, gv, b, bv.t(), T::one(), ga, MatView::row_major(m, k));
            }
            if let Some(pb) = p[1] {
                let gb = slot(grads, nodes, pb);
                let av = MatView::row_major(m, k);
                if *trans_b {
                    // gb is [n, k] = g^T a
                    gemm(g, gv.t(), a, av, T::one(), gb, MatView::row_major(n, k));
                } else {
                    gemm(a, av.t(), g, gv, T::one(), gb, MatView::row_major(k, n));
                }
            }
        }
        Op::BatchMatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        } => {
            let (m, k, n) = (*m, *k, *n);
            let gv = MatView::row_major(m, n);
            let av = MatView::row_major(m, k);
            let bv = if *trans_b {
                MatView::row_major(n, k).t()
            } else {
                MatView::row_major(k, n)
            };
            if let Some(pa) = p[0] {
                let ga = slot(grads, nodes, pa);
                for i in 0..*batch {
                    gemm(
                        &g[i * m * n..(i + 1) * m * n],
                        gv,
                        &b[i * k * n..(i + 1) * k * n],
                        bv.t(),
                        T::one(),
                        &mut ga[i * m * k..(i + 1) * m * k],
                        av,
                    );
                }
            }
            if let Some(pb) = p[1] {
                let gb = slot(grads, nodes, pb);
                for i in 0..*batch {
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let as_ = &a[i * m * k..(i + 1) * m * k];
                    let out = &mut gb[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        gemm(gs, gv.t(), as_, av, T::one(), out, MatView::row_major(n, k));
                    } else {
                        gemm(as_, av.t(), gs, gv, T::one(), out, MatView::row_major(k, n));
                    }
                }
            }
        }
        Op::SwapAxes { outer, x, y, inner } => {
            if let Some(px) = p[0] {
                let (outer, x, y, inner) = (*outer, *x, *y, *inner);
                let gx = slot(grads, nodes, px);
                for o in 0..outer {
                    for i in 0..x {
                        for j in 0..y {
                            let src = ((o * y + j) * x + i) * inner;
                            let dst = ((o * x + i) * y + j) * inner;
                            for c in 0..inner {
                                gx[dst + c] += g[src + c];
                            }
                        }
                    }
                }
            }
        }
        Op::Narrow {
            outer,
            axis,
            start,
            len,
            inner,
        } => {
            if let Some(px) = p[0] {
                let gx = slot(grads, nodes, px);
                for o in 0..*outer {
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    let dst = &mut gx[(o * axis + start) * inner..(o * axis + start + len) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        Op::Concat { outer, lens, inner } => {
            let total: usize = lens.iter().sum();
            let mut offset = 0;
            for (pi, &len) in lens.iter().enumerate() {
                if let Some(pid) = p[pi] {
                    let gp = slot(grads, nodes, pid);
                    for o in 0..*outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut gp[o * len * inner..(o + 1) * len * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Softmax { out, n } => {
            if let Some(px) = p[0] {
                let gx = slot(grads, nodes, px);
                for ((gr, yr), dr) in g.chunks(*n).zip(out.chunks(*n)).zip(gx.chunks_mut(*n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += yv * (gv - dot);
                    }
                }
            }
        }
        Op::RmsNorm { x, gain, inv_rms, d } => {
            let d = *d;
            let dn = T::from_usize(d).unwrap();
            if let Some(px) = p[0] {
                let gx = slot(grads, nodes, px);
                for (r, &ir) in inv_rms.iter().enumerate() {
                    let xr = &x[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: T = (0..d).map(|j| gain[j] * gr[j] * xr[j]).sum();
                    let coef = ir * ir * ir * dot / dn;
                    for j in 0..d {
                        gx[r * d + j] += ir * gain[j] * gr[j] - coef * xr[j];
                    }
                }
            }
            if let Some(pg) = p[1] {
                let gg = slot(grads, nodes, pg);
                for (r, &ir) in inv_rms.iter().enumerate() {
                    for j in 0..d {
                        gg[j] += g[r * d + j] * x[r * d + j] * ir;
                    }
                }
            }
        }
        Op::SiluMul { gate, up } => {
            if let Some(pg) = p[0] {
                let gg = slot(grads, nodes, pg);
                for i in 0..g.len() {
                    let z = gate[i];
                    let s = sigmoid(z);
                    gg[i] += g[i] * up[i] * s * (T::one() + z * (T::one() - s));
                }
            }
            if let Some(pu) = p[1] {
                let gu = slot(grads, nodes, pu);
                for i in 0..g.len() {
                    let z = gate[i];
                    gu[i] += g[i] * z * sigmoid(z);
                }
            }
        }
        Op::Rope {
            cos,
            sin,
            outer,
            seq,
            mid,
            half,
        } => {
            if let Some(px) = p[0] {
                let gx = slot(grads, nodes, px);
                let dh = 2 * half;
                for o in 0..*outer {
                    for s in 0..*seq {
                        let tc = &cos[s * half..(s + 1) * half];
                        let ts = &sin[s * half..(s + 1) * half];
                        for h in 0..*mid {
                            let base = ((o * seq + s) * mid + h) * dh;
                            for i in 0..*half {
                                let g0 = g[base + 2 * i];
                                let g1 = g[base + 2 * i + 1];
                                gx[base + 2 * i] += g0 * tc[i] + g1 * ts[i];
                                gx[base + 2 * i + 1] += g1 * tc[i] - g0 * ts[i];
                            }
                        }
                    }
                }
            }
        }
        Op::Gather { idx, cols } => {
            if let Some(pt) = p[0] {
                let cols = *cols;
                let gt = slot(grads, nodes, pt);
                for (r, &row) in idx.iter().enumerate() {
                    for (d, &s) in gt[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                    {
                        *d += s;
                    }
                }
            }
        }
        Op::CrossEntropy {
            probs,
            targets,
            vocab,
            count,
        } => {
            if let Some(px) = p[0] {
                let gx = slot(grads, nodes, px);
                if *count == 0 {
                    return;
                }
                let scale = g[0] / T::from_usize(*count).unwrap();
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    for v in 0..*vocab {
                        let onehot = if v == *t { T::one() } else { T::zero() };
                        gx[r * vocab + v] += scale * (probs[r * vocab + v] - onehot);
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}
