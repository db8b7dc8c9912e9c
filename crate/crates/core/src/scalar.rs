//! Floating-point element type shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of tensors, feature matrices and optimizer state.
///
/// Implemented for `f32` and `f64`. Training and metric code defaults to
/// `f64`; `f32` is the storage precision of checkpoints and feature files.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal; exact for `f64`, rounded for `f32`.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Rounds through `f32`, the precision used on disk.
    fn storage_round(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn storage_round(self) -> Self {
        self as f32 as f64
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn storage_round(self) -> Self {
        self
    }
}
