//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable N-dimensional array (row-major, layout
//! `[N, C, H, W]` for feature maps). Each forward op records its parents and
//! a backward closure on the produced node; the graph is rebuilt on every
//! forward pass. `backward()` on a scalar walks the recorded tape in reverse
//! topological order and accumulates gradients into every node that requires
//! them.
//!
//! Every op validates that its output is finite; a NaN or infinity is an
//! error, never a silent state.

mod gradcheck;
mod kernels;
mod ops;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, InputReport};
pub use ops::*;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{DustError, Result};
use crate::real::Real;

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run a closure with gradient recording disabled (forwards build no tape).
pub fn with_no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn<P> = Box<dyn Fn(&[P])>;

struct Inner<P: Real> {
    id: usize,
    shape: Vec<usize>,
    data: Rc<Vec<P>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<P>>>,
    parents: Vec<Tensor<P>>,
    backward: Option<BackwardFn<P>>,
}

/// Shared handle to an immutable tensor value (clone is O(1)).
pub struct Tensor<P: Real> {
    inner: Rc<Inner<P>>,
}

impl<P: Real> Clone for Tensor<P> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<P: Real> fmt::Debug for Tensor<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.inner.shape, self.inner.requires_grad
        )
    }
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite<P: Real>(op: &'static str, data: &[P]) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(DustError::NonFinite {
                op,
                detail: format!("value {v} at flat index {i}"),
            });
        }
    }
    Ok(())
}

impl<P: Real> Tensor<P> {
    fn build(
        shape: Vec<usize>,
        data: Rc<Vec<P>>,
        requires_grad: bool,
        parents: Vec<Tensor<P>>,
        backward: Option<BackwardFn<P>>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Leaf tensor from raw data; no gradient tracking.
    pub fn from_vec(shape: &[usize], data: Vec<P>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(DustError::dim(
                "from_vec",
                format!("shape {:?} wants {} scalars, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        check_finite("from_vec", &data)?;
        Ok(Self::build(shape.to_vec(), Rc::new(data), false, Vec::new(), None))
    }

    /// Leaf tensor that accumulates gradients (parameters, gradcheck probes).
    pub fn leaf(shape: &[usize], data: Vec<P>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(DustError::dim(
                "leaf",
                format!("shape {:?} wants {} scalars, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        check_finite("leaf", &data)?;
        Ok(Self::build(shape.to_vec(), Rc::new(data), true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), Rc::new(vec![P::zero(); numel_of(shape)]), false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], v: P) -> Self {
        Self::build(shape.to_vec(), Rc::new(vec![v; numel_of(shape)]), false, Vec::new(), None)
    }

    pub fn scalar(v: P) -> Self {
        Self::build(vec![1], Rc::new(vec![v]), false, Vec::new(), None)
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| P::from_f64(v)).collect())
    }

    /// Node produced by an op. Gradient bookkeeping is attached only when
    /// recording is enabled and some parent requires gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<P>,
        parents: Vec<Tensor<P>>,
        backward: impl Fn(&[P]) + 'static,
    ) -> Result<Self> {
        if numel_of(&shape) != data.len() {
            return Err(DustError::dim(
                op,
                format!("op produced {} scalars for shape {:?}", data.len(), shape),
            ));
        }
        check_finite(op, &data)?;
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Ok(Self::build(shape, Rc::new(data), true, parents, Some(Box::new(backward))))
        } else {
            Ok(Self::build(shape, Rc::new(data), false, Vec::new(), None))
        }
    }

    /// Node that reuses its parent's storage (reshape-style ops). The data
    /// was validated when first produced, so no finiteness rescan.
    pub(crate) fn from_op_shared(
        op: &'static str,
        shape: Vec<usize>,
        data: Rc<Vec<P>>,
        parents: Vec<Tensor<P>>,
        backward: impl Fn(&[P]) + 'static,
    ) -> Result<Self> {
        if numel_of(&shape) != data.len() {
            return Err(DustError::dim(
                op,
                format!("op produced {} scalars for shape {:?}", data.len(), shape),
            ));
        }
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Ok(Self::build(shape, data, true, parents, Some(Box::new(backward))))
        } else {
            Ok(Self::build(shape, data, false, Vec::new(), None))
        }
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<P>> {
        Rc::clone(&self.inner.data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[P] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn item(&self) -> P {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<P>> {
        self.inner.grad.borrow().clone()
    }

    /// Take and clear the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<P>> {
        self.inner.grad.borrow_mut().take()
    }

    pub(crate) fn accumulate_grad(&self, g: &[P]) {
        if !self.inner.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Leaf view of this tensor's value, detached from the tape
    /// (shares storage).
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), Rc::clone(&self.inner.data), false, Vec::new(), None)
    }

    /// Same value as a gradient-accumulating leaf.
    pub fn detach_leaf(&self) -> Self {
        Self::build(self.inner.shape.clone(), Rc::clone(&self.inner.data), true, Vec::new(), None)
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        Tensor::<f64>::from_vec(
            &self.inner.shape,
            self.inner.data.iter().map(|v| v.as_f64()).collect(),
        )
        .expect("to_f64_tensor")
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(DustError::Contract {
                detail: format!("backward requires a scalar, got shape {:?}", self.shape()),
            });
        }
        if !self.inner.requires_grad {
            return Err(DustError::Contract {
                detail: "backward on a tensor with no gradient path".into(),
            });
        }
        self.accumulate_grad(&[P::one()]);
        let order = self.topo_order();
        for node in order.iter().rev() {
            if let Some(back) = &node.inner.backward {
                let grad = node.inner.grad.borrow();
                if let Some(g) = grad.as_ref() {
                    back(g);
                }
            }
        }
        Ok(())
    }

    /// Post-order over the recorded graph (parents before children).
    fn topo_order(&self) -> Vec<Tensor<P>> {
        let mut order = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // Iterative DFS; (node, next-parent-index) frames.
        let mut stack: Vec<(Tensor<P>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, idx)) = stack.pop() {
            if idx < node.inner.parents.len() {
                let parent = node.inner.parents[idx].clone();
                stack.push((node, idx + 1));
                if parent.inner.requires_grad && visited.insert(parent.inner.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_shape_mismatch_is_dim_error() {
        let r = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0]);
        assert!(matches!(r, Err(DustError::Dim { .. })));
    }

    #[test]
    fn non_finite_input_rejected() {
        let r = Tensor::<f64>::from_vec(&[2], vec![1.0, f64::NAN]);
        assert!(matches!(r, Err(DustError::NonFinite { .. })));
    }

    #[test]
    fn grad_accumulates_across_uses() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let x = Tensor::<f64>::leaf(&[1], vec![3.0]).unwrap();
        let y = add(&mul(&x, &x).unwrap(), &x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn no_grad_suppresses_tape() {
        let x = Tensor::<f64>::leaf(&[1], vec![3.0]).unwrap();
        let y = with_no_grad(|| mul(&x, &x).unwrap());
        assert!(!y.requires_grad());
        assert!(y.backward().is_err());
    }
}
