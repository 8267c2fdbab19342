use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Numeric type usable by the co-occurrence, coherence and composition kernels.
///
/// Only field arithmetic and ordering are required, so exact rationals qualify
/// alongside `f32`/`f64`.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Converts a count, panicking only if the scalar cannot represent it.
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count not representable in scalar type")
    }

    /// Lossy conversion for reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Floating-point scalar, needed wherever magnitudes or tolerances are taken.
pub trait Real: Scalar + Float {}

impl<T> Real for T where T: Scalar + Float {}

/// `a / b` for counts, in the scalar's own arithmetic.
pub(crate) fn ratio<T: Scalar>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_count(num) / T::from_count(den)
    }
}
