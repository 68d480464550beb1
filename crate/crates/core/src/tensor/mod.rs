//! Reverse-mode autodiff engine.
//!
//! Tensors are dense rank-1..4 arrays (N,C,H,W order for images) with an
//! optional gradient buffer. Operations in [`ops`] compute a forward result
//! and, when a [`Tape`] is recording, push a backward closure that routes
//! gradients to their inputs. Everything is generic over the scalar type:
//! training runs in `f32`, gradient checking in `f64`.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod pointwise;
pub mod pool;
pub mod shape_ops;
pub mod tape;

pub(crate) mod matmul;

pub use tape::{backward, Tape};

/// Operations re-exported in one place.
pub mod ops {
    pub use super::conv::{conv2d, up_conv2d};
    pub use super::linear::dense;
    pub use super::loss::{loss, LossKind};
    pub use super::norm::{batchnorm2d, BatchNormState};
    pub use super::pointwise::{
        activation, add, dropout, mul, relu, sigmoid, softmax_channels, tanh, Activation,
    };
    pub use super::pool::{global_avg_pool, maxpool2d};
    pub use super::shape_ops::{concat_channels, flatten_spatial, slice_channels, sum_all};
}

/// Scalar type the engine runs on. `f32` for training, `f64` for the
/// gradient-check mode.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Extents of a tensor, rank 1 to 4. Rank-4 tensors are read as N,C,H,W.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    dims: [usize; 4],
    rank: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Shape> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::Shape {
                op: "shape",
                detail: format!("rank must be 1..=4, got {}", dims.len()),
            });
        }
        let mut d = [1usize; 4];
        d[..dims.len()].copy_from_slice(dims);
        Ok(Shape {
            dims: d,
            rank: dims.len(),
        })
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Extent along axis `i` (must be < rank).
    #[inline]
    pub fn d(&self, i: usize) -> usize {
        self.dims[i]
    }

    /// N,C,H,W of a rank-4 shape.
    pub(crate) fn nchw(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.rank != 4 {
            return Err(Error::Shape {
                op,
                detail: format!("expected rank-4 N,C,H,W tensor, got {self}"),
            });
        }
        Ok((self.dims[0], self.dims[1], self.dims[2], self.dims[3]))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Dense tensor handle. Cloning is cheap (shared storage); data and gradient
/// live behind interior mutability so the tape's backward closures and the
/// optimizer can write through shared handles. Single-threaded by design.
pub struct Tensor<S: Scalar> {
    shape: Shape,
    requires_grad: bool,
    data: Rc<RefCell<Vec<S>>>,
    grad: Rc<RefCell<Option<Vec<S>>>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape,
            requires_grad: self.requires_grad,
            data: Rc::clone(&self.data),
            grad: Rc::clone(&self.grad),
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor from a flat row-major buffer. Rejects shape/data length
    /// mismatches and non-finite values.
    pub fn from_vec(dims: &[usize], data: Vec<S>) -> Result<Tensor<S>> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape} implies {} values, got {}", shape.numel(), data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("tensor construction (shape {shape})"),
            });
        }
        Ok(Self::from_parts(shape, data, false))
    }

    pub fn zeros(dims: &[usize]) -> Tensor<S> {
        let shape = Shape::new(dims).expect("static shape");
        let n = shape.numel();
        Self::from_parts(shape, vec![S::zero(); n], false)
    }

    pub fn filled(dims: &[usize], value: S) -> Tensor<S> {
        let shape = Shape::new(dims).expect("static shape");
        let n = shape.numel();
        Self::from_parts(shape, vec![value; n], false)
    }

    pub fn scalar(value: S) -> Tensor<S> {
        Self::from_parts(Shape::new(&[1]).unwrap(), vec![value], false)
    }

    /// Internal constructor: trusted data, no finiteness scan.
    pub(crate) fn from_parts(shape: Shape, data: Vec<S>, requires_grad: bool) -> Tensor<S> {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            requires_grad,
            data: Rc::new(RefCell::new(data)),
            grad: Rc::new(RefCell::new(None)),
        }
    }

    /// Mark this tensor as a trainable leaf.
    pub fn requiring_grad(mut self) -> Tensor<S> {
        self.requires_grad = true;
        self
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Borrow the flat data buffer.
    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.data.borrow()
    }

    /// Clone the flat data out.
    pub fn values(&self) -> Vec<S> {
        self.data.borrow().clone()
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data.borrow()[0]
    }

    /// Overwrite the data in place; shape is preserved.
    pub fn copy_from(&self, values: &[S]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::Shape {
                op: "copy_from",
                detail: format!("expected {} values, got {}", self.numel(), values.len()),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "copy_from".to_string(),
            });
        }
        self.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Current gradient, if any.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.grad.borrow().clone()
    }

    /// Drop the gradient buffer.
    pub fn clear_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient buffer, creating it at zero first.
    pub(crate) fn accumulate_grad(&self, delta: &[S]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<S>>> {
        self.grad.borrow()
    }

    pub(crate) fn data_mut(&self) -> std::cell::RefMut<'_, Vec<S>> {
        self.data.borrow_mut()
    }

    /// True when two handles share the same storage.
    pub fn same_storage(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.data, &other.data)
    }

    /// Error if any stored value is NaN or infinite.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        if self.data.borrow().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Deep copy with fresh storage; gradient is not copied.
    pub fn detached_copy(&self) -> Tensor<S> {
        Tensor::from_parts(self.shape, self.values(), false)
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{}>[{}]{}",
            std::any::type_name::<S>(),
            self.shape,
            if self.requires_grad { " (grad)" } else { "" }
        )
    }
}

pub(crate) fn check_same_shape<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            detail: format!("shapes {} and {} differ", a.shape(), b.shape()),
        });
    }
    Ok(())
}
