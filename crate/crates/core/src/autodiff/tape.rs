use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    MulCols(Var, Var),
    AddPerBatch(Var, Var),
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Conv1d {
        x: Var,
        w: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Softmax(Var),
    Silu(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    GatherRows {
        table: Var,
        index: Vec<usize>,
    },
    ConcatLast(Var, Var),
    ConcatSeq(Var, Var),
    SliceSeq {
        x: Var,
        start: usize,
    },
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        heads: usize,
    },
    Reshape(Var),
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Records primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Moves a gradient out, leaving `None` behind.
    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input: gradients are reported for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A fixed input: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    /// Reverse sweep from a single-element `loss`. The tape is left intact,
    /// so the sweep can be replayed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let value = &self.nodes[loss.0].value;
        if value.numel() != 1 {
            return Err(Error::shape("backward", value.shape(), &[1]));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                location: format!("loss node {}", loss.0),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(value.shape(), T::one()));

        for index in (0..=loss.0).rev() {
            let node = &self.nodes[index];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[index].take() else {
                continue;
            };
            self.backward_op(index, &upstream, &mut grads)?;
        }
        Ok(Gradients { grads })
    }
}
