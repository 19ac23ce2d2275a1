//! Scalar abstraction for the numeric core.
//!
//! The math modules ([`crate::beta`], [`crate::metrics`], [`crate::postprocess`],
//! [`crate::fusion`]) are generic over [`Scalar`] so they work with `f32` or
//! `f64`. The training pipeline and all persisted artifacts are pinned to
//! `f64`; concrete aliases for that instantiation live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal or count.
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant converts to scalar")
    }

    /// Conversion from a collection length.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("usize count converts to scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
