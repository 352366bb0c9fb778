//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Every op executed through a [`Var`] appends one node to its [`Tape`].
//! [`Tape::backward`] walks those nodes in exact reverse execution order and
//! may run only once per tape.

mod broadcast;
mod elementwise;
mod matmul;
mod reduce;
mod shape;
mod softmax;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use crate::error::{contract_err, Error, Result};
use crate::float::Float;
use crate::tensor::Tensor;

pub(crate) use matmul::gemm;
pub use elementwise::ElementwiseOp;
pub use reduce::ReduceOp;

type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    is_leaf: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Ordered record of executed operations.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    /// Storage key of each registered parameter -> its leaf node.
    params: RefCell<HashMap<usize, usize>>,
    tracking: bool,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a tape.
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    /// A tape that records gradient rules.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            tracking: true,
            consumed: Cell::new(false),
        }
    }

    /// A tape for inference: values are computed, no gradient rules are kept.
    pub fn no_grad() -> Self {
        Tape {
            tracking: false,
            ..Self::new()
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value that never receives a gradient (inputs, targets).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Node {
            value,
            requires_grad: false,
            is_leaf: true,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// Records a tracked leaf, e.g. a parameter or an input under test.
    ///
    /// Registering the same tensor storage twice returns the same leaf, so
    /// parameters shared between call sites accumulate a single gradient.
    pub fn leaf(&self, value: &Tensor<T>) -> Var<'_, T> {
        let key = value.storage_key();
        if let Some(&id) = self.params.borrow().get(&key) {
            return Var { tape: self, id };
        }
        let var = self.push_node(Node {
            value: value.clone(),
            requires_grad: self.tracking,
            is_leaf: true,
            parents: Vec::new(),
            backward: None,
        });
        self.params.borrow_mut().insert(key, var.id);
        var
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends the result of an op. `backward` maps the output gradient to
    /// one optional gradient per parent, in parent order.
    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            self.tracking && parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push_node(Node {
            value,
            requires_grad,
            is_leaf: false,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        })
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Propagates d(loss)/d(node) to every tracked node.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if self.consumed.replace(true) {
            return Err(Error::BackwardTwice);
        }
        if !self.tracking {
            return contract_err("backward on a no-grad tape");
        }
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return contract_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &mut nodes[id];
            if let Some(rule) = node.backward.take() {
                let parent_grads = rule(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                let parents = node.parents.clone();
                for (pid, pg) in parents.into_iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[pid].requires_grad {
                        continue;
                    }
                    accumulate(&mut grads[pid], pg);
                }
            }
            if nodes[id].is_leaf {
                grads[id] = Some(grad);
            }
        }

        // Every tracked leaf gets a gradient, zero if it was unreachable.
        for (id, node) in nodes.iter().enumerate() {
            if node.is_leaf && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            by_node: grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn accumulate<T: Float>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: HashMap<usize, usize>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a tracked leaf recorded on the tape.
    pub fn of(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_node.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a parameter registered with [`Tape::leaf`].
    pub fn wrt(&self, param: &Tensor<T>) -> Option<&Tensor<T>> {
        let id = *self.params.get(&param.storage_key())?;
        self.by_node[id].as_ref()
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Copy of the forward value (cheap, storage is shared).
    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            contract_err("operands recorded on different tapes")
        }
    }
}
