//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Values are immutable after an op creates them; only leaf parameters are
//! mutated, and only through [`Tensor::set_data`] (the optimizer path). Every
//! op validates shapes and input finiteness eagerly — a NaN or Inf anywhere
//! is a bug, not a value.
//!
//! The graph is a dynamic tape: each op output holds its parents and a
//! closure computing the vector-Jacobian product. [`Tensor::backward`] walks
//! the graph in reverse topological order and accumulates gradients into
//! every node that requires them. Gradients add up across backward calls
//! until [`Tensor::zero_grad`] clears them.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::scalar::Scalar;

mod broadcast;
mod conv;
mod elementwise;
mod matmul;
mod norm;
mod shape_ops;

pub use broadcast::broadcast_shapes;

/// Vector-Jacobian product: given the gradient flowing into this node,
/// produce the gradient contribution for each parent (None when a parent
/// does not require one).
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward_fn: Option<BackwardFn<T>>,
}

/// A dense row-major tensor. Cheap to clone (shared storage).
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AutodiffError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward on a detached tensor: nothing in the graph requires a gradient")]
    DetachedGraph,
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True while op recording is enabled on this thread.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Run `f` with op recording disabled (inference / finite differences).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard(bool);
    impl Drop for Guard {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let _guard = Guard(prev);
    f()
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn assert_finite<T: Scalar>(op: &str, data: &[T]) {
    if !data.iter().all(|v| v.is_finite()) {
        panic!("{op}: non-finite input value");
    }
}

impl<T: Scalar> Tensor<T> {
    fn from_inner(
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward_fn: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward_fn,
            }),
        }
    }

    /// Leaf tensor without gradient tracking.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor: shape {:?} implies {} elements, got {}",
            shape,
            numel(shape),
            data.len()
        );
        assert_finite("tensor::new", &data);
        Tensor::from_inner(data, shape.to_vec(), false, Vec::new(), None)
    }

    /// Leaf parameter: gradients accumulate here.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), data.len(), "param: shape/data mismatch");
        assert_finite("tensor::param", &data);
        Tensor::from_inner(data, shape.to_vec(), true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(vec![T::zero(); numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::new(vec![T::one(); numel(shape)], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor::new(vec![value; numel(shape)], shape)
    }

    pub fn scalar(value: T) -> Self {
        Tensor::new(vec![value], &[1])
    }

    /// Internal constructor for op results. Tracks the graph only when
    /// recording is enabled and some parent requires a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward_fn: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Tensor::from_inner(data, shape, true, parents, Some(Box::new(backward_fn)))
        } else {
            Tensor::from_inner(data, shape, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    /// Overwrite the values of a leaf (optimizer updates, test setup).
    pub fn set_data(&self, data: Vec<T>) {
        assert_eq!(data.len(), self.numel(), "set_data: length mismatch");
        *self.inner.data.borrow_mut() = data;
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add an externally computed gradient (shape-checked).
    pub fn add_grad(&self, delta: &[T]) {
        assert_eq!(
            delta.len(),
            self.numel(),
            "add_grad: gradient length {} does not match shape {:?}",
            delta.len(),
            self.shape()
        );
        self.accumulate_grad(delta);
    }

    /// A leaf copy sharing no graph history.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_inner(self.to_vec(), self.shape().to_vec(), false, Vec::new(), None)
    }

    fn accumulate_grad(&self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Each reachable tensor with
    /// `requires_grad` receives its gradient, added to whatever it already
    /// holds.
    pub fn backward(&self) -> Result<(), AutodiffError> {
        if self.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(AutodiffError::DetachedGraph);
        }

        let order = self.topo_order();
        // Per-pass flow buffers: this sweep's contribution only, so repeated
        // backward calls add independent gradients instead of re-propagating
        // previously stored ones.
        let mut flow: HashMap<u64, Vec<T>> = HashMap::new();
        flow.insert(self.id(), vec![T::one()]);

        for node in order.iter().rev() {
            let Some(g) = flow.remove(&node.id()) else {
                continue;
            };
            node.accumulate_grad(&g);
            if let Some(bf) = &node.inner.backward_fn {
                let contribs = bf(&g);
                debug_assert_eq!(contribs.len(), node.inner.parents.len());
                for (parent, contrib) in node.inner.parents.iter().zip(contribs) {
                    if !parent.requires_grad() {
                        continue;
                    }
                    if let Some(c) = contrib {
                        debug_assert_eq!(c.len(), parent.numel());
                        match flow.get_mut(&parent.id()) {
                            Some(acc) => {
                                for (a, ci) in acc.iter_mut().zip(&c) {
                                    *a += *ci;
                                }
                            }
                            None => {
                                flow.insert(parent.id(), c);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the graph reachable from self (iterative; graphs from
    /// deep networks overflow a recursive walk).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.inner.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_construction_and_access() {
        let t = Tensor::new(vec![1.0f32, 2.0, 3.0, 4.0], &[2, 2]);
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.numel(), 4);
        assert!(!t.requires_grad());
        assert_eq!(t.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "shape [2, 3] implies 6 elements, got 4")]
    fn shape_data_mismatch_rejected() {
        let _ = Tensor::new(vec![0.0f32; 4], &[2, 3]);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_rejected() {
        let _ = Tensor::new(vec![1.0f64, f64::NAN], &[2]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]);
        let loss = x.mul(&x).sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let x = Tensor::param(vec![3.0f64], &[1]);
        let l1 = x.mul(&x).sum();
        l1.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        let l2 = x.mul(&x).sum();
        l2.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_non_scalar_rejected() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]);
        let y = x.mul(&x);
        assert_eq!(
            y.backward().unwrap_err(),
            AutodiffError::NonScalarLoss(vec![2])
        );
    }

    #[test]
    fn backward_detached_rejected() {
        let x = Tensor::new(vec![1.0f64], &[1]);
        assert_eq!(x.backward().unwrap_err(), AutodiffError::DetachedGraph);
        let p = Tensor::param(vec![1.0f64], &[1]);
        let d = p.mul(&p).sum().detach();
        assert_eq!(d.backward().unwrap_err(), AutodiffError::DetachedGraph);
    }

    #[test]
    fn backward_linearity() {
        // grad of (l1 + l2) equals grad(l1) + grad(l2), leaf by leaf.
        let x = Tensor::param(vec![0.5f64, -1.5, 2.0], &[3]);
        let l1 = x.mul(&x).sum();
        let l2 = x.sigmoid().sum();
        l1.add(&l2).backward().unwrap();
        let combined = x.grad().unwrap();

        let x2 = Tensor::param(vec![0.5f64, -1.5, 2.0], &[3]);
        x2.mul(&x2).sum().backward().unwrap();
        let g1 = x2.grad().unwrap();
        x2.zero_grad();
        x2.sigmoid().sum().backward().unwrap();
        let g2 = x2.grad().unwrap();

        for i in 0..3 {
            assert!((combined[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]);
        let y = no_grad(|| x.mul(&x).sum());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn diamond_graph_accumulates_through_shared_node() {
        // y = x*x used twice: loss = y.sum() + y.sum() -> dx = 2 * 2x
        let x = Tensor::param(vec![3.0f64], &[1]);
        let y = x.mul(&x);
        let loss = y.sum().add(&y.sum());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }
}
