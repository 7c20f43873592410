//! Scalar abstraction shared by every estimator in the crate.
//!
//! All numerical routines are generic over [`Scalar`], which is satisfied by
//! `f32` and `f64`. Tolerances in the public contracts are stated for `f64`;
//! the `f32` instantiation is usable but only meets looser accuracy.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Real floating-point type usable by the estimators.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Converts a count into the scalar type.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }

    #[inline]
    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean<T: Scalar>(xs: &[T]) -> T {
        xs.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(xs.len())
    }

    #[test]
    fn generic_helpers_work_for_both_widths() {
        assert_eq!(mean(&[1.0f64, 2.0, 3.0]), 2.0);
        assert_eq!(mean(&[1.0f32, 2.0, 3.0]), 2.0);
        assert!(!f64::lit(f64::NAN).is_finite_value());
        assert_eq!(3.0f32.square(), 9.0);
    }
}
