use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &mut GradSink<'_>)>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Receives gradient contributions during the reverse sweep.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
    requires: &'a [bool],
}

impl GradSink<'_> {
    /// Whether `v` takes part in differentiation.
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Adds `g` into the gradient of `v`.
    pub fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.requires[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

/// Records operations in execution order so they can be replayed backwards.
///
/// A tape is single-owner and single-use: one forward pass, one
/// [`backward`](Tape::backward).
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Option<Vec<Option<Tensor>>>>,
    empty_segments: Cell<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf value.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push_node(Rc::new(value), requires_grad, None)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Number of empty segments met by segmented softmax on this tape.
    pub fn empty_segment_count(&self) -> usize {
        self.empty_segments.get()
    }

    pub(crate) fn note_empty_segments(&self, count: usize) {
        self.empty_segments.set(self.empty_segments.get() + count);
    }

    fn push_node(
        &self,
        value: Rc<Tensor>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var(nodes.len() - 1)
    }

    /// Records an op result; `backward` runs only if some parent requires grad.
    pub(crate) fn push(
        &self,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&Tensor, &mut GradSink<'_>) + 'static,
    ) -> Var {
        let requires = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push_node(Rc::new(value), requires, Some(Box::new(backward)))
    }

    /// Reverse sweep from a 1x1 loss. Fails if gradients from a previous
    /// sweep have not been cleared with [`reset_grads`](Self::reset_grads).
    pub fn backward(&self, loss: Var) -> Result<()> {
        if self.grads.borrow().is_some() {
            return Err(TensorError::TapeConsumed);
        }
        self.sweep(loss)
    }

    /// Like [`backward`](Self::backward) but adds into existing gradients.
    pub fn backward_accumulate(&self, loss: Var) -> Result<()> {
        self.sweep(loss)
    }

    fn sweep(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape().to_vec();
        if shape != [1, 1] {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let requires: Vec<bool> = nodes.iter().map(|n| n.requires_grad).collect();
        let mut grads_slot = self.grads.borrow_mut();
        let grads = grads_slot.get_or_insert_with(|| vec![None; nodes.len()]);
        grads.resize(nodes.len(), None);

        let mut pending: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            if let Some(bw) = &nodes[id].backward {
                let mut sink = GradSink {
                    grads: &mut pending[..],
                    requires: &requires,
                };
                bw(&g, &mut sink);
            }
            match &mut grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradient of the last loss with respect to `v`, if `v` influenced it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.borrow().as_ref()?.get(v.0)?.clone()
    }

    pub fn reset_grads(&self) {
        *self.grads.borrow_mut() = None;
    }
}
