//! Computation record and reverse pass.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the reverse pass. Nodes are only ever appended, so the node
//! order is a topological order and the reverse pass is a single backwards
//! sweep over the record.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::ops::Op;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// Append-only record of one forward computation.
pub struct Graph<F: Float> {
    pub(crate) nodes: Vec<Node<F>>,
    grad_enabled: bool,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true }
    }

    /// A graph that records values only; `param` leaves do not require
    /// gradients and no reverse-pass state is kept.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input: never receives an adjoint.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        let requires_grad = self.grad_enabled;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        value.check_finite(op_name)?;
        let requires_grad = self.grad_enabled && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Forward identity whose reverse pass contributes nothing upstream.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar loss. The returned adjoints cover every
    /// node that requires a gradient and is reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !matches!(node.op, Op::Leaf) {
                let mut sink = GradSink { graph: self, grads: &mut grads };
                crate::ops::backward_op(self, &node.op, &node.value, &g, &mut sink);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Accumulates adjoints for inputs of the node being processed.
pub(crate) struct GradSink<'a, F: Float> {
    graph: &'a Graph<F>,
    grads: &'a mut Vec<Option<Tensor<F>>>,
}

impl<F: Float> GradSink<'_, F> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.graph.nodes[v.0].requires_grad
    }

    pub(crate) fn add(&mut self, v: Var, g: Tensor<F>) {
        if !self.wants(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.graph.value(v).shape());
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulate from a raw buffer shaped like `v`.
    pub(crate) fn add_data(&mut self, v: Var, data: Vec<F>) {
        if !self.wants(v) {
            return;
        }
        let shape = self.graph.value(v).shape().to_vec();
        self.add(v, Tensor::new(&shape, data).expect("adjoint shape"));
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of the given shape when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<F> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
