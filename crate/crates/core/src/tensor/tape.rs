use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// Implementations return one entry per input in [`BackwardRule::inputs`]
/// order; an entry may be `None` when `needs[i]` is false.
pub trait BackwardRule<T: Scalar> {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> Vec<Var>;

    fn backward(
        &self,
        tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    rule: Option<Box<dyn BackwardRule<T>>>,
}

/// Wengert list of operations. Nodes are appended in evaluation order, so
/// every node's inputs precede it.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf value.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            rule: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Constant leaf; never accumulates gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an operation result. The backward rule is kept only when some
    /// input requires gradient.
    pub fn push(&mut self, value: Tensor<T>, rule: Box<dyn BackwardRule<T>>) -> Var {
        let requires_grad = rule.inputs().iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value,
            requires_grad,
            rule: requires_grad.then_some(rule),
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape is {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.0] = Some(Tensor::ones(root.value.shape().to_vec()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = &node.rule else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs = rule.inputs();
            let needs: Vec<bool> = inputs.iter().map(|&v| self.requires_grad(v)).collect();
            let input_grads = rule.backward(self, &node.value, &g, &needs)?;
            for ((v, need), ig) in inputs.into_iter().zip(needs).zip(input_grads) {
                if !need {
                    continue;
                }
                let Some(ig) = ig else { continue };
                debug_assert_eq!(ig.shape(), self.shape(v), "gradient shape from {}", rule.name());
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let requires = self.nodes.iter().map(|n| n.requires_grad).collect();
        Ok(Grads {
            grads,
            shapes,
            requires,
        })
    }
}

/// Gradients produced by [`Tape::backward`]. Only leaves retain their
/// gradient; intermediate buffers are released during the sweep.
pub struct Grads<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    requires: Vec<bool>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of a leaf. `None` if the leaf does not require grad; zeros if
    /// it does but is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        if !self.requires[v.0] {
            return None;
        }
        Some(
            self.grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone())),
        )
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if !self.requires[v.0] {
            return None;
        }
        Some(
            self.grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone())),
        )
    }
}
