//! Scalar abstraction over the floating-point element type.
//!
//! All numerical code in this crate is generic over [`Scalar`] so the same
//! implementation runs in 64-bit (gradient checking, tests) and 32-bit
//! (training runs). Concrete aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type of tensors, parameters and losses.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Dtype tag written into checkpoint headers.
    const DTYPE: &'static str;

    /// Convert an `f64` constant, panicking on unrepresentable values.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }

    /// Widen to `f64` for reporting and metrics.
    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}
