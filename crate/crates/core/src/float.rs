//! Scalar abstraction for the numeric core.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar used throughout the numeric core.
///
/// Everything the kernels, the QP solver and the model trainers need from a
/// scalar, bundled into one trait. Implemented for `f32` and `f64`; the
/// crate-root aliases fix `f64`.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for tolerances and literals.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    /// Lossy conversion from `usize`, for counts entering formulas.
    fn cast_usize(v: usize) -> Self {
        Self::from_usize(v).unwrap()
    }
}

impl Float for f32 {}
impl Float for f64 {}
