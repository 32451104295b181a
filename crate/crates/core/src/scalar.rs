//! Numeric abstraction for the analytic checks.
//!
//! Admission and buffer sizing are written once over [`Scalar`] so they can be
//! evaluated in floating point for quick exploration or in exact rationals
//! when the verdict is a hard gate.

use std::fmt::Debug;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::Num;

/// Field-like number usable by the admission and buffering formulas.
pub trait Scalar: Num + Clone + PartialOrd + Debug {
    fn from_u64(v: u64) -> Self;

    /// `num / den` in this representation. `den` must be non-zero.
    fn ratio(num: u64, den: u64) -> Self {
        Self::from_u64(num) / Self::from_u64(den)
    }

    /// Smallest integral value not less than `self`.
    fn ceil(&self) -> Self;
}

impl Scalar for f64 {
    fn from_u64(v: u64) -> Self {
        v as f64
    }

    fn ceil(&self) -> Self {
        f64::ceil(*self)
    }
}

impl Scalar for f32 {
    fn from_u64(v: u64) -> Self {
        v as f32
    }

    fn ceil(&self) -> Self {
        f32::ceil(*self)
    }
}

impl<I> Scalar for Ratio<I>
where
    I: Integer + Clone + Debug + From<u64>,
{
    fn from_u64(v: u64) -> Self {
        Ratio::from_integer(I::from(v))
    }

    fn ratio(num: u64, den: u64) -> Self {
        Ratio::new(I::from(num), I::from(den))
    }

    fn ceil(&self) -> Self {
        Ratio::ceil(self)
    }
}
