use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, SeldError};

/// Backward closure: receives the output gradient, the output value and the
/// parent handles, and accumulates into the parents' gradients.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[Var])>;

struct Node {
    shape: Vec<usize>,
    value: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A tensor taking part in the reverse-mode graph.
///
/// Cloning a `Var` clones the handle, not the data. Leaves created with
/// [`Var::param`] collect gradients across backward passes until
/// [`Var::zero_grad`] is called.
#[derive(Clone)]
pub struct Var(Rc<Node>);

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// Runs `f` without recording any graph edges.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
        }
    }
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _guard = Guard;
    f()
}

pub(crate) fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Var {
    fn leaf(values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if values.len() != numel(shape) {
            return Err(SeldError::shape(
                "tensor",
                format!("{} values do not fill shape {:?}", values.len(), shape),
            ));
        }
        Ok(Var(Rc::new(Node {
            shape: shape.to_vec(),
            value: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// Constant tensor; never receives a gradient.
    pub fn constant(values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        Self::leaf(values, shape, false)
    }

    /// Trainable leaf tensor.
    pub fn param(values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        Self::leaf(values, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Var {
        Self::leaf(vec![0.0; numel(shape)], shape, false).expect("shape matches")
    }

    pub fn full(shape: &[usize], v: f64) -> Var {
        Self::leaf(vec![v; numel(shape)], shape, false).expect("shape matches")
    }

    pub fn scalar(v: f64) -> Var {
        Self::leaf(vec![v], &[], false).expect("shape matches")
    }

    /// Builds an op result. Parents and the backward closure are only kept
    /// when some parent needs a gradient and recording is enabled.
    pub(crate) fn from_op(
        values: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Var>,
        backward: BackwardFn,
    ) -> Var {
        debug_assert_eq!(values.len(), numel(&shape));
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Var(Rc::new(Node {
            shape,
            value: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn value(&self) -> Ref<'_, Vec<f64>> {
        self.0.value.borrow()
    }

    /// Mutable access to the stored values; intended for leaves (optimizer
    /// updates, checkpoint loading, finite-difference probes).
    pub fn value_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.value.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.value.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.shape());
        v[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn ptr_eq(&self, other: &Var) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Detached copy of the current value.
    pub fn detach(&self) -> Var {
        Var::constant(self.to_vec(), self.shape()).expect("shape matches")
    }

    /// Adds `g` into this node's gradient buffer.
    pub(crate) fn accumulate(&self, g: &[f64]) {
        if !self.requires_grad() {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Calls `f` with a mutable, zero-initialised-on-demand gradient buffer.
    pub(crate) fn with_grad_mut(&self, f: impl FnOnce(&mut [f64])) {
        if !self.requires_grad() {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![0.0; numel(&self.0.shape)]);
        f(buf);
    }

    /// Reverse-mode pass from a scalar root.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(SeldError::shape(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape()),
            ));
        }
        self.backward_with(&[1.0])
    }

    /// Reverse-mode pass seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: &[f64]) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(SeldError::shape("backward", "seed length differs from root size"));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate(seed);
        for node in order.iter().rev() {
            let Some(bw) = node.0.backward.as_ref() else {
                continue;
            };
            let grad = node.0.grad.borrow_mut().take();
            let Some(grad) = grad else { continue };
            let value = node.0.value.borrow();
            bw(&grad, &value, &node.0.parents);
        }
        Ok(())
    }

    /// Post-order over the differentiable subgraph reachable from `self`.
    fn topo_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        seen.insert(Rc::as_ptr(&self.0));
        while let Some((node, idx)) = stack.pop() {
            if idx < node.0.parents.len() {
                let parent = node.0.parents[idx].clone();
                stack.push((node, idx + 1));
                if parent.requires_grad() && seen.insert(Rc::as_ptr(&parent.0)) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value();
        let head: Vec<f64> = v.iter().take(6).copied().collect();
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("head", &head)
            .finish()
    }
}

impl Drop for Node {
    // Unlink long parent chains iteratively so deep graphs do not overflow
    // the stack on drop.
    fn drop(&mut self) {
        let mut pending: Vec<Var> = std::mem::take(&mut self.parents);
        while let Some(v) = pending.pop() {
            if let Ok(mut node) = Rc::try_unwrap(v.0) {
                pending.append(&mut node.parents);
            }
        }
    }
}
