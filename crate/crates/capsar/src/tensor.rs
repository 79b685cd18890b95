//! Dense tensors over a flat row-major buffer.
//!
//! Shapes are plain `Vec<usize>` and all indexing math is explicit — no
//! strides, no views. That keeps every operation auditable against the
//! formulas it implements, which matters more here than raw speed: the
//! entire model fits in a few megabytes and the gradient engine replays
//! each op by hand.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar types the math layer runs on.
///
/// Training uses `f32`; gradient checking re-runs the same code in `f64`,
/// where finite differences have enough headroom below the check threshold.
pub trait Element:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Copy
    + 'static
{
    /// Lossy conversion from `f64`; the one constructor constants go through.
    fn of(x: f64) -> Self;
    /// Exact widening to `f64` for accumulation and reporting.
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// N-dimensional array: shape plus row-major data.
///
/// Invariant: `data.len() == shape.iter().product()`, and every element is
/// finite. Constructors enforce both; ops that could produce non-finite
/// values re-check and fail loudly rather than let a NaN propagate.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor, validating length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i} in new tensor of shape {shape:?}",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![E::zero(); n],
        }
    }

    pub fn from_vec(data: Vec<E>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element at a 2-D position; rows and cols bound-checked in debug only.
    pub fn at2(&self, r: usize, c: usize) -> E {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Reinterprets the buffer under a new shape of equal volume.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Converts element type, e.g. an `f32` parameter into the `f64`
    /// gradient-checking world.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| F::of(x.to_f64())).collect(),
        }
    }

    /// Euclidean norm of the whole buffer.
    pub fn norm(&self) -> E {
        self.data
            .iter()
            .map(|&x| x * x)
            .fold(E::zero(), |a, b| a + b)
            .sqrt()
    }

    /// Verifies the finite-values invariant, naming `ctx` on failure.
    pub fn check_finite(&self, ctx: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i} in {ctx} (shape {:?})",
                self.data[i], self.shape
            )));
        }
        Ok(())
    }
}
