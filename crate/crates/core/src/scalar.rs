//! Scalar abstraction for the numeric core.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for every numeric kernel in this crate.
///
/// `f32` is the production dtype; `f64` runs the identical code path for
/// gradient checks and oracle tests.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` literals and RNG draws.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    /// Widen to `f64` for accumulation and reporting.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares<F: Scalar>(xs: &[F]) -> F {
        xs.iter().map(|x| *x * *x).sum()
    }

    #[test]
    fn generic_kernel_matches_both_widths() {
        let a32 = sum_of_squares(&[1.0f32, 2.0, 3.0]);
        let a64 = sum_of_squares(&[1.0f64, 2.0, 3.0]);
        assert_eq!(a32, 14.0);
        assert_eq!(a64, 14.0);
    }

    #[test]
    fn f64_round_trip() {
        assert_eq!(f32::from_f64_c(0.25).to_f64_c(), 0.25);
    }
}
