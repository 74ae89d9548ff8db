//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable row-major array. Tensors produced from a
//! [`Tape`] leaf (directly or through any primitive) carry a reference to
//! that tape, and every primitive they take part in is recorded so that
//! [`Tape::backward`] can propagate gradients. Tensors without a tape
//! reference are plain values: primitives on them record nothing.
//!
//! [`Tensor::stop_gradient`] cuts the recording: its output shares the
//! input's values but no gradient flows back through it.

mod nn;
mod ops;
pub(crate) mod real;
mod tape;

use std::sync::Arc;

pub use nn::{attention, cross_entropy, rms_norm, rope_rotate, swiglu_ffn, token_mix_ffn, RopeTable};
pub use real::Real;
pub use tape::{Gradients, Tape};

use crate::error::{Result, RsmError};
use tape::NodeId;

pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<(Tape<T>, NodeId)>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: self.node.clone(),
        }
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::from_arc(shape, Arc::new(data))
    }

    pub fn from_arc(shape: &[usize], data: Arc<Vec<T>>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(RsmError::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![T::zero(); numel]),
            node: None,
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; numel]),
            node: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![v]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_arc(&self) -> &Arc<Vec<T>> {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape<T>> {
        self.node.as_ref().map(|(t, _)| t)
    }

    pub(crate) fn node(&self) -> Option<(Tape<T>, NodeId)> {
        self.node.clone()
    }

    pub(crate) fn with_node(mut self, tape: Tape<T>, id: NodeId) -> Self {
        self.node = Some((tape, id));
        self
    }

    /// Same values, no tape reference. Does not record anything.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Reinterprets the row-major data under a new shape. Shares the tape
    /// node: gradients are stored flat, so no new node is needed.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(RsmError::shape("reshape", format!("{:?} -> {:?}", self.shape, shape)));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            node: self.node.clone(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                    .collect(),
            ),
            node: None,
        }
    }

    /// Index of the largest entry of each trailing-axis vector.
    pub fn argmax_last(&self) -> Vec<usize> {
        let n = *self.shape.last().unwrap_or(&1);
        self.data
            .chunks(n)
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}
