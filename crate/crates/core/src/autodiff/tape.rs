//! Wengert tape for reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value, the ids of its
//! inputs and a vector-Jacobian closure. Node ids are assigned in recording
//! order, so the node list is topologically sorted by construction and the
//! backward pass is a single reverse sweep.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inputs handed to a backward closure.
pub struct BackwardArgs<'a, T> {
    pub inputs: &'a [Arc<Tensor<T>>],
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
}

/// Vector-Jacobian product: one optional gradient per input, in input order.
pub type BackwardFn<T> = dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>;

struct Node<T> {
    op: &'static str,
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<Box<BackwardFn<T>>>,
}

/// Recorded computation graph. One tape per training step; drop it after the
/// optimizer update.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    trap_non_finite: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            trap_non_finite: Cell::new(false),
        }
    }

    /// Debug mode: every op checks its output and fails on NaN/Inf.
    pub fn with_trap(self, on: bool) -> Self {
        self.trap_non_finite.set(on);
        self
    }

    pub fn set_trap(&self, on: bool) {
        self.trap_non_finite.set(on);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf value. Gradients are accumulated for leaves with `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        self.push(Node {
            op: "leaf",
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        })
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Record a primitive. The closure is dropped when no input needs a
    /// gradient, so no-grad forwards keep only values.
    pub fn record<'t, F>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        backward: F,
    ) -> Result<Var<'t, T>>
    where
        F: Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if self.trap_non_finite.get() && !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| {
                debug_assert!(std::ptr::eq(v.tape, self), "var from another tape");
                nodes[v.id].requires_grad
            })
        };
        Ok(self.push(Node {
            op,
            value: Arc::new(value),
            parents: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        }))
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar loss. Each recorded op is visited at most
    /// once; gradients of intermediate nodes are released as soon as they
    /// have been propagated.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::Backward(format!(
                "loss must be scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(TensorError::Backward(
                "loss is not connected to any leaf requiring grad".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Arc<Tensor<T>>> =
                node.parents.iter().map(|&p| Arc::clone(&nodes[p].value)).collect();
            let input_grads = backward(&BackwardArgs {
                inputs: &inputs,
                output: &node.value,
                grad: &grad,
            });
            debug_assert_eq!(input_grads.len(), node.parents.len(), "{}", node.op);
            for (&parent, g) in node.parents.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[parent].requires_grad {
                    continue;
                }
                if g.shape() != nodes[parent].value.shape() {
                    return Err(TensorError::Backward(format!(
                        "{}: gradient shape {:?} does not match input {:?}",
                        node.op,
                        g.shape(),
                        nodes[parent].value.shape()
                    )));
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // keep leaf gradients only
        for (id, node) in nodes.iter().enumerate() {
            if node.backward.is_some() {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Owned copy of the value.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }

    /// Gradient of a leaf, or zeros if the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
