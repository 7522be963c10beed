//! Numeric abstractions shared by the cost model.
//!
//! Most of the arithmetic (traffic, memory power, placement) only needs the
//! field operations, so it is written against [`Scalar`] and runs unchanged on
//! `f32`, `f64` and exact rationals. Anything that needs `exp`/`ln` (the
//! accuracy law and the planner built on it) asks for [`Real`].

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Field-like scalar used by the cost model.
pub trait Scalar:
    Num + Signed + FromPrimitive + ToPrimitive + Copy + PartialOrd + Debug + Display + Send + Sync + 'static
{
    /// Relative tolerance for byte-conservation checks. Zero for exact types.
    fn conservation_tolerance() -> Self;

    /// Converts a configuration constant. Panics only if the type cannot
    /// represent finite `f64` values at all.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(|| panic!("{v} is not representable"))
    }

    fn from_count(v: u64) -> Self {
        Self::from_u64(v).unwrap_or_else(|| panic!("{v} is not representable"))
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `|a - b| <= tol * max(|a|, |b|, 1)`.
    fn close_to(self, other: Self) -> bool {
        let scale = [self.abs(), other.abs(), Self::one()]
            .into_iter()
            .fold(Self::zero(), |m, v| if v > m { v } else { m });
        (self - other).abs() <= Self::conservation_tolerance() * scale
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Scalar for f32 {
    fn conservation_tolerance() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn conservation_tolerance() -> Self {
        1e-9
    }
}

impl Scalar for num_rational::Ratio<i128> {
    fn conservation_tolerance() -> Self {
        Self::from_integer(0)
    }
}

/// Floating-point scalar (`f32` or `f64`).
pub trait Real: Scalar + Float {}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    #[test]
    fn close_to_is_relative_for_floats() {
        assert!(1.0e9_f64.close_to(1.0e9 + 0.5));
        assert!(!1.0_f64.close_to(1.001));
    }

    #[test]
    fn close_to_is_exact_for_rationals() {
        let a = Rational::new(1, 3);
        assert!(a.close_to(Rational::new(2, 6)));
        assert!(!a.close_to(Rational::new(1_000_000_001, 3_000_000_000)));
    }

    #[test]
    fn lit_round_trips_dyadic_values() {
        assert_eq!(Rational::lit(1.5), Rational::new(3, 2));
        assert_eq!(f32::lit(120.0), 120.0);
    }
}
