//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every operation of one forward pass in execution order,
//! which is a topological order by construction. Each recorded node keeps its
//! output value and, when any operand requires a gradient, a closure mapping
//! the output gradient to operand gradients. [`Tape::backward`] replays those
//! closures in reverse and may run only once per tape.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
    consumed: Cell<bool>,
    frozen: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            consumed: Cell::new(false),
            frozen: false,
        }
    }

    /// A tape on which parameters never require gradients, so no backward
    /// closures are recorded. For inference.
    pub fn frozen() -> Self {
        Self { frozen: true, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let id =
            self.push_node(Node { value: Rc::new(value), parents: Vec::new(), backward: None, requires_grad: false });
        Var { tape: self, id }
    }

    /// An input whose gradient is wanted.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let id =
            self.push_node(Node { value: Rc::new(value), parents: Vec::new(), backward: None, requires_grad: true });
        Var { tape: self, id }
    }

    /// Places a stored parameter on the tape. Repeated calls with the same id
    /// return the same node, so gradients from every use accumulate there.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let node = self.push_node(Node {
            value: Rc::new(p.value.clone()),
            parents: Vec::new(),
            backward: None,
            requires_grad: p.requires_grad && !self.frozen,
        });
        self.params.borrow_mut().insert(id, node);
        Var { tape: self, id: node }
    }

    /// Records an operation. `backward` receives the output gradient and
    /// returns one optional gradient per entry of `inputs`, in order.
    pub fn record<F>(&self, value: Tensor<T>, inputs: &[Var<'_, T>], backward: F) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let node = if requires_grad {
            Node {
                value: Rc::new(value),
                parents: inputs.iter().map(|v| v.id).collect(),
                backward: Some(Box::new(backward)),
                requires_grad: true,
            }
        } else {
            Node { value: Rc::new(value), parents: Vec::new(), backward: None, requires_grad: false }
        };
        let id = self.push_node(node);
        Var { tape: self, id }
    }

    /// Computes d`loss`/d(every recorded leaf and parameter).
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if self.consumed.replace(true) {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.len() != 1 {
            self.consumed.set(false);
            return Err(Error::NonScalarLoss(loss_shape));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(&loss_shape));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let leaves = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && n.backward.is_none())
            .map(|(i, n)| {
                let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (i, g)
            })
            .collect();
        let params = self.params.borrow().iter().map(|(&p, &n)| (p, n)).collect();
        Ok(Gradients { leaves, params })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    fn value_ref(&self) -> Ref<'_, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| n[self.id].value.as_ref())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients produced by one backward pass, keyed by leaf node.
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf or parameter node. Leaves the loss does
    /// not depend on report zeros; constants and intermediates report `None`.
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&v.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, n)| self.leaves.get(n))
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, Tensor<T>)> + '_ {
        self.params.iter().filter_map(|(p, n)| self.leaves.get(n).map(|g| (*p, g.clone())))
    }
}
