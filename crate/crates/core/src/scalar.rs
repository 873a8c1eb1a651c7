//! Floating-point scalar abstraction shared by the tensor engine and the model.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless widening used for metrics, reports and checkpoints.
    fn to_f64_lossless(self) -> f64;

    /// Narrowing from f64 (rounds for f32).
    fn of(x: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
}
