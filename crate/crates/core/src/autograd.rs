//! Tape-based reverse-mode differentiation.
//!
//! Every differentiable op evaluates eagerly and, when recording is enabled
//! and at least one input needs a gradient, pushes a node holding a backward
//! closure. Nodes are appended in evaluation order, so walking the tape
//! backwards is a valid topological order.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Backward closure: receives the gradient of the node's output and a mask of
/// which parents need gradients, returns one optional gradient per parent.
pub(crate) type BackwardFn<T> =
    Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Scalar> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
    shape: Vec<usize>,
}

/// The recording of one forward evaluation.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records ops for a later backward pass.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    /// A tape that never records; ops only evaluate values.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            node: None,
            value: Arc::new(value),
        }
    }

    /// A leaf whose gradient can be read back from [`Gradients::wrt`].
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(Arc::new(value), None)
    }

    /// A leaf bound to a stored parameter; its gradient is routed to the
    /// parameter by [`Gradients::accumulate_into`].
    pub fn param(&self, value: Arc<Tensor<T>>, id: ParamId) -> Var<'_, T> {
        self.leaf(value, Some(id))
    }

    fn leaf(&self, value: Arc<Tensor<T>>, param: Option<ParamId>) -> Var<'_, T> {
        let node = self.enabled.then(|| {
            self.push(Node {
                parents: Vec::new(),
                backward: None,
                param,
                shape: value.shape().to_vec(),
            })
        });
        Var {
            tape: self,
            node,
            value,
        }
    }

    /// Registers the result of an op. The backward closure is only kept when
    /// recording and at least one parent requires a gradient.
    pub(crate) fn record<'t, F>(&'t self, value: Tensor<T>, parents: &[&Var<'t, T>], backward: F) -> Var<'t, T>
    where
        F: FnOnce(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    {
        let parent_ids: Vec<Option<usize>> = parents.iter().map(|p| p.node).collect();
        let node = if self.enabled && parent_ids.iter().any(Option::is_some) {
            Some(self.push(Node {
                parents: parent_ids,
                backward: Some(Box::new(backward)),
                param: None,
                shape: value.shape().to_vec(),
            }))
        } else {
            None
        };
        Var {
            tape: self,
            node,
            value: Arc::new(value),
        }
    }

    /// Backpropagates from a one-element `root`, seeding its gradient with 1.
    pub fn backward(&self, root: &Var<'_, T>) -> Result<Gradients<T>> {
        if root.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() needs a scalar root, got shape {:?}; use backward_with",
                root.value.shape()
            )));
        }
        self.backward_with(root, Tensor::ones(root.value.shape()))
    }

    /// Backpropagates an explicit upstream gradient from `root`.
    pub fn backward_with(&self, root: &Var<'_, T>, upstream: Tensor<T>) -> Result<Gradients<T>> {
        let root_id = root.node.ok_or_else(|| {
            Error::Usage("backward on a value with no recorded forward graph".into())
        })?;
        if upstream.shape() != root.value.shape() {
            return Err(Error::Usage(format!(
                "upstream gradient shape {:?} does not match root {:?}",
                upstream.shape(),
                root.value.shape()
            )));
        }
        let n = root_id + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[root_id] = Some(upstream);
        let mut out = Gradients {
            inputs: HashMap::new(),
            params: Vec::new(),
        };
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let (parents, backward, param, shape) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                (
                    node.parents.clone(),
                    node.backward.take(),
                    node.param,
                    node.shape.clone(),
                )
            };
            debug_assert_eq!(g.shape(), &shape[..]);
            if parents.is_empty() {
                match param {
                    Some(p) => out.params.push((p, g)),
                    None => {
                        out.inputs.insert(id, g);
                    }
                }
                continue;
            }
            let backward = backward.ok_or_else(|| {
                Error::Usage("backward already consumed for this graph".into())
            })?;
            let needs: Vec<bool> = parents.iter().map(Option::is_some).collect();
            let pgrads = backward(&g, &needs)?;
            debug_assert_eq!(pgrads.len(), parents.len());
            for (pid, pg) in parents.iter().zip(pgrads) {
                if let (Some(pid), Some(pg)) = (pid, pg) {
                    match &mut grads[*pid] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A value produced on a tape.
#[derive(Clone)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    node: Option<usize>,
    value: Arc<Tensor<T>>,
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn value_arc(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.node)
            .field("value", &self.value)
            .finish()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T: Scalar> {
    inputs: HashMap<usize, Tensor<T>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of an input leaf, if it was reached.
    pub fn wrt(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.inputs.get(&id))
    }

    /// Adds parameter gradients into the store's grad buffers.
    pub fn accumulate_into(self, store: &mut ParamStore<T>) {
        for (id, g) in self.params {
            store.grad_mut(id).add_assign(&g);
        }
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }
}
