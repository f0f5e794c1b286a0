use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point storage type for learnable parameters.
///
/// Models are stored as `f32`; `f64` is the reference precision used by the
/// gradient checks.
pub trait Real:
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
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// A flat learnable buffer together with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuf<T> {
    pub values: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> ParamBuf<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn from_values(values: Vec<T>) -> Self {
        let grad = vec![T::zero(); values.len()];
        Self { values, grad }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Converts the buffer to another precision. Gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamBuf<U> {
        ParamBuf::from_values(self.values.iter().map(|v| U::of(v.f64())).collect())
    }
}
