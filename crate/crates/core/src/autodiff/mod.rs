//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradients of every leaf that requires them. A graph can be
//! differentiated once; build a new one for the next step.
//!
//! ```
//! use mesti_core::autodiff::Graph;
//! use mesti_core::tensor::{Shape, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::from_vec(Shape::scalar(), vec![3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
//! ```

mod conv;
mod linalg;
mod norm;
mod pointwise;
mod pool;

use std::collections::HashMap;

pub use conv::conv_output_extent;
pub use norm::{BatchMoments, BN_EPS, BN_MOMENTUM};
pub use pointwise::Axis;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Forward-pass behaviour of batch norm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

pub(crate) enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { input: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Linear { input: Var, weight: Var, bias: Var },
    Dropout { input: Var, mask: Vec<f64> },
    Add(Var, Var),
    Mul(Var, Var),
    AbsDiff(Var, Var),
    ShiftAbsDiff { input: Var, axis: Axis },
    GateMul { input: Var, gate: Var },
    ScaleBy { input: Var, scale: Var },
    SoftmaxRows(Var),
    SpatialAttention { q: Var, k: Var, v: Var, weights: Vec<f64> },
    BatchMatMul { lhs: Var, rhs: Var, trans_lhs: bool, trans_rhs: bool },
    Reshape(Var),
    Sum(Var),
    FocalLoss { probs: Var, targets: Vec<usize>, gamma: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    spent: bool,
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    leaves: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var, usize)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Graph::variable`] or [`Graph::param`].
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.leaves.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a trainable parameter; zeros when it was registered on the
    /// graph but not reachable from the loss. `None` when the parameter was
    /// never registered.
    pub fn param(&self, id: ParamId) -> Option<Vec<f64>> {
        self.params
            .iter()
            .find(|(p, _, _)| *p == id)
            .map(|&(_, var, len)| self.wrt(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec))
    }

    /// All registered trainable parameters with their gradients.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, std::borrow::Cow<'_, [f64]>)> + '_ {
        self.params.iter().map(|&(id, var, len)| {
            let g = match self.wrt(var) {
                Some(g) => std::borrow::Cow::Borrowed(g),
                None => std::borrow::Cow::Owned(vec![0.0; len]),
            };
            (id, g)
        })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    /// Constant input; no gradient is produced for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Register a stored parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let var = self.push(p.tensor.clone(), Op::Leaf, p.trainable);
        self.params.insert(id, var);
        var
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite() || matches!(op, Op::Leaf), "non-finite forward value");
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.needs(v))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::StaleGraph);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!("backward needs a scalar loss, got {:?}", self.shape(loss))));
        }
        self.spent = true;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.backward_node(i, &g);
            for (var, contrib) in contributions {
                if !self.needs(var) {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        let mut params: Vec<_> =
            self.params.iter().filter(|(_, v)| self.needs(**v)).map(|(&id, &v)| (id, v, self.value(v).len())).collect();
        params.sort_by_key(|&(id, _, _)| id);
        Ok(Gradients { leaves: grads, params })
    }

    /// Gradient contributions of node `i` to its inputs given upstream `g`.
    fn backward_node(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, weight, bias, stride, padding } => {
                conv::backward(self, *input, *weight, *bias, *stride, *padding, out.shape(), g)
            }
            Op::BatchNorm { input, gamma, beta, mean, inv_std, train } => {
                norm::backward(self, *input, *gamma, *beta, mean, inv_std, *train, g)
            }
            Op::Relu(x) => pointwise::relu_backward(self, *x, g),
            Op::Sigmoid(x) => pointwise::sigmoid_backward(*x, out, g),
            Op::MaxPool { input, argmax } => pool::maxpool_backward(self, *input, argmax, g),
            Op::GlobalAvgPool(x) => pool::gap_backward(self, *x, g),
            Op::Linear { input, weight, bias } => linalg::linear_backward(self, *input, *weight, *bias, g),
            Op::Dropout { input, mask } => {
                vec![(*input, g.iter().zip(mask).map(|(a, m)| a * m).collect())]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => pointwise::mul_backward(self, *a, *b, g),
            Op::AbsDiff(a, b) => pointwise::abs_diff_backward(self, *a, *b, g),
            Op::ShiftAbsDiff { input, axis } => pointwise::shift_abs_diff_backward(self, *input, *axis, g),
            Op::GateMul { input, gate } => pointwise::gate_mul_backward(self, *input, *gate, g),
            Op::ScaleBy { input, scale } => pointwise::scale_by_backward(self, *input, *scale, g),
            Op::SoftmaxRows(x) => linalg::softmax_rows_backward(*x, out, g),
            Op::SpatialAttention { q, k, v, weights } => {
                linalg::spatial_attention_backward(self, *q, *k, *v, weights, g)
            }
            Op::BatchMatMul { lhs, rhs, trans_lhs, trans_rhs } => {
                linalg::bmm_backward(self, *lhs, *rhs, *trans_lhs, *trans_rhs, g)
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::FocalLoss { probs, targets, gamma } => {
                crate::train::loss::focal_backward(self, *probs, targets, *gamma, g)
            }
        }
    }

    /// Same values viewed under another shape.
    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub(crate) fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.any_needs(inputs);
        self.push(value, op, rg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn(Shape::new(2, 3, 2, 2), |i| i as f64));
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn second_backward_is_stale() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::StaleGraph)));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(Shape::new(1, 1, 1, 2)));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0), true).unwrap();
        let b = store.add("b", Tensor::scalar(5.0), true).unwrap();
        let mut g = Graph::new();
        let va = g.param(&store, a);
        let _vb = g.param(&store, b);
        let l = g.sum(va);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param(a).unwrap(), vec![1.0]);
        assert_eq!(grads.param(b).unwrap(), vec![0.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.variable(Tensor::scalar(4.0));
        let y = g.mul(c, x).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap(), &[2.0]);
    }
}
