//! Dense-tensor substrate with recorded forward computation and exact
//! reverse-mode gradients.
//!
//! A [`Tensor`] is a cheaply clonable handle to a dense row-major `f64`
//! array. Operations live on [`Tape`]: running an op computes the output
//! eagerly and, when any input participates in differentiation, records a
//! backward rule on the tape. [`Tape::backward`] replays the records in
//! reverse, accumulating `∂loss/∂t` into every tensor that requires
//! gradients, then clears the tape.
//!
//! Tapes and their tensors are single-threaded by construction (`Rc`
//! handles); independent tapes on different workers never share state.

mod kernels;
mod tape;

pub mod grad_check;

pub use tape::{OpAttrs, OpKind, Tape};

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{DynastyError, Result};

struct Storage {
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

struct Inner {
    shape: Vec<usize>,
    requires_grad: bool,
    data: RefCell<Storage>,
}

/// Handle to a dense n-dimensional `f64` array (row-major).
///
/// Cloning a `Tensor` clones the handle, not the data: both handles see the
/// same values and gradient. A rank-0 shape (`[]`) denotes a scalar.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(DynastyError::dim(
                "tensor",
                format!("shape {:?} implies {} values, got {}", shape, numel, values.len()),
            ));
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape,
                requires_grad,
                data: RefCell::new(Storage { values, grad: None }),
            }),
        })
    }

    /// Constant (non-differentiated) tensor.
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::build(shape.to_vec(), values, false)
    }

    /// Learnable tensor: participates in recording and receives gradients.
    pub fn parameter(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::build(shape.to_vec(), values, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![0.0; n], false).expect("consistent by construction")
    }

    /// Rank-0 scalar constant.
    pub fn scalar(value: f64) -> Self {
        Self::build(Vec::new(), vec![value], false).expect("consistent by construction")
    }

    pub(crate) fn output(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Self {
        Self::build(shape, values, requires_grad).expect("op kernels produce consistent shapes")
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the values. The borrow must not outlive any tape op call on
    /// tensors sharing this storage.
    pub fn values(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.data.borrow(), |s| s.values.as_slice())
    }

    pub fn values_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().values.clone()
    }

    /// The single value of a scalar (1-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow().values[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.data.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.data.borrow_mut().grad = None;
    }

    /// Mutate values in place (optimizer updates, finite-difference probes).
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.data.borrow_mut().values);
    }

    /// Detached copy: same values, constant, no shared storage.
    pub fn detach_copy(&self) -> Tensor {
        Tensor::from_vec(&self.inner.shape, self.values_vec()).expect("same shape")
    }

    pub(crate) fn seed_grad_one(&self) {
        self.inner.data.borrow_mut().grad = Some(vec![1.0; self.len()]);
    }

    /// Add `g` into this tensor's gradient (no-op unless `requires_grad`).
    pub(crate) fn accumulate_grad(&self, g: &[f64]) -> Result<()> {
        if !self.inner.requires_grad {
            return Ok(());
        }
        if !kernels::all_finite(g) {
            return Err(DynastyError::NonFinite { op: "backward".into() });
        }
        let mut data = self.inner.data.borrow_mut();
        match &mut data.grad {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => data.grad = Some(g.to_vec()),
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let data = self.inner.data.borrow();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("values", &data.values)
            .finish()
    }
}
