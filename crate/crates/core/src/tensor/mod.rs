//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value node in an implicit tape: ops build new
//! nodes that remember their parents and a gradient closure. [`backward`]
//! walks the recorded graph once in reverse topological order and leaves
//! gradients on the tracked leaves. Tapes are per-forward-pass and
//! single-threaded; matmul kernels may use threads internally.

mod adam;
pub mod ops;
mod param;
mod scalar;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use param::{Mode, ParamSet, Parameter, Session};
pub use scalar::{s, Scalar};

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// Working precision for models and training.
pub type Real = f32;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
    #[error("loss is not tracked by any tape")]
    Untracked,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type GradFn<S> = Box<dyn Fn(&[S])>;

struct Node<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    values: Vec<S>,
    requires_grad: bool,
    parents: Vec<Tensor<S>>,
    grad_fn: Option<GradFn<S>>,
    grad: RefCell<Option<Vec<S>>>,
    consumed: Cell<bool>,
}

/// Immutable n-dimensional value, optionally participating in a gradient tape.
#[derive(Clone)]
pub struct Tensor<S: Scalar = Real>(Rc<Node<S>>);

impl<S: Scalar> Tensor<S> {
    fn make(
        shape: Vec<usize>,
        values: Vec<S>,
        requires_grad: bool,
        parents: Vec<Tensor<S>>,
        grad_fn: Option<GradFn<S>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            values,
            requires_grad,
            parents,
            grad_fn,
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        }))
    }

    /// Untracked constant.
    pub fn constant(shape: &[usize], values: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "constant: {} values for shape {:?}",
            values.len(),
            shape
        );
        Tensor::make(shape.to_vec(), values, false, Vec::new(), None)
    }

    /// Tracked leaf; gradients accumulate here after [`backward`].
    pub fn leaf(shape: &[usize], values: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor::make(shape.to_vec(), values, true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::constant(shape, vec![S::zero(); shape.iter().product()])
    }

    pub fn scalar(x: S) -> Self {
        Tensor::constant(&[1], vec![x])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<S>,
        parents: Vec<Tensor<S>>,
        grad_fn: GradFn<S>,
    ) -> Self {
        let requires = parents.iter().any(|p| p.requires_grad());
        if requires {
            Tensor::make(shape, values, true, parents, Some(grad_fn))
        } else {
            // Constant subgraphs carry no tape weight.
            Tensor::make(shape, values, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.0.values
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.requires_grad && self.0.grad_fn.is_none()
    }

    /// Number of rows when viewed as a matrix (first dim; 1 for scalars).
    pub fn rows(&self) -> usize {
        self.0.shape.first().copied().unwrap_or(1)
    }

    /// Row width when viewed as a matrix (product of trailing dims).
    pub fn cols(&self) -> usize {
        if self.0.shape.len() <= 1 {
            1
        } else {
            self.0.shape[1..].iter().product()
        }
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.len(), 1, "item() on tensor of {} elements", self.len());
        self.0.values[0]
    }

    /// Gradient accumulated on a leaf by the last backward pass.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.borrow().clone()
    }

    pub(crate) fn accumulate(&self, g: &[S]) {
        debug_assert_eq!(g.len(), self.len());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.values.iter().all(|v| v.is_finite())
    }

    /// Reinterpret the same values under a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Tensor<S> {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.len(),
            "reshape {:?} -> {:?}",
            self.shape(),
            shape
        );
        let x = self.clone();
        Tensor::from_op(
            shape.to_vec(),
            self.values().to_vec(),
            vec![self.clone()],
            Box::new(move |g| x.accumulate(g)),
        )
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Run reverse-mode differentiation from a scalar loss.
///
/// Leaves hold dLoss/dLeaf afterwards; intermediate gradients are dropped as
/// soon as they have been propagated. A tape can only be consumed once.
pub fn backward<S: Scalar>(loss: &Tensor<S>) -> Result<()> {
    if loss.len() != 1 {
        return Err(TensorError::NonScalarLoss(loss.len()));
    }
    if !loss.requires_grad() {
        return Err(TensorError::Untracked);
    }
    if loss.0.consumed.get() {
        return Err(TensorError::TapeConsumed);
    }
    loss.0.consumed.set(true);
    if !loss.all_finite() {
        return Err(TensorError::NonFinite("loss".into()));
    }

    // Iterative post-order DFS over grad-requiring parents.
    let mut order: Vec<Tensor<S>> = Vec::new();
    let mut visited: std::collections::HashSet<u64> = std::collections::HashSet::new();
    let mut stack: Vec<(Tensor<S>, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.0.id);
    while let Some((node, child_idx)) = stack.pop() {
        let parents = &node.0.parents;
        if child_idx < parents.len() {
            stack.push((node.clone(), child_idx + 1));
            let p = &parents[child_idx];
            if p.requires_grad() && visited.insert(p.0.id) {
                stack.push((p.clone(), 0));
            }
        } else {
            order.push(node);
        }
    }

    loss.accumulate(&[S::one()]);
    for node in order.iter().rev() {
        let g = node.0.grad.borrow_mut().take();
        let Some(g) = g else { continue };
        if let Some(f) = &node.0.grad_fn {
            f(&g);
        }
        if node.is_leaf() {
            // Leaves keep their gradient for the optimizer.
            *node.0.grad.borrow_mut() = Some(g);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn backward_sum_gives_ones() {
        let x = Tensor::<f64>::leaf(&[3], vec![1.0, 2.0, 3.0]);
        let loss = ops::sum_all(&x);
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn independent_leaf_gets_no_grad() {
        let x = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]);
        let y = Tensor::<f64>::leaf(&[2], vec![5.0, 6.0]);
        let loss = ops::sum_all(&x);
        backward(&loss).unwrap();
        assert!(y.grad().is_none());
    }

    #[test]
    fn two_term_loss_adds_grads() {
        let x = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]);
        let a = ops::sum_all(&x);
        let b = ops::sum_all(&ops::mul(&x, &x));
        let loss = ops::add(&a, &b);
        backward(&loss).unwrap();
        // d/dx (sum x + sum x^2) = 1 + 2x
        assert_eq!(x.grad().unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn tape_consumed_twice_errors() {
        let x = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]);
        let loss = ops::sum_all(&x);
        backward(&loss).unwrap();
        assert!(matches!(backward(&loss), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn constant_subgraphs_stay_constant() {
        let a = Tensor::<f64>::constant(&[2], vec![1.0, 2.0]);
        let b = ops::mul(&a, &a);
        assert!(!b.requires_grad());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]);
        assert!(matches!(
            backward(&x),
            Err(TensorError::NonScalarLoss(2))
        ));
    }
}
