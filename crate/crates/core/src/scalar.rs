use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the statistics and scoring code is written against.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal; every `Scalar` can represent (a rounding of) any finite f64.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

pub(crate) fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

/// Sum of squared deviations from the mean.
pub(crate) fn sum_sq_dev<T: Scalar>(xs: &[T], centre: T) -> T {
    xs.iter().map(|&x| (x - centre) * (x - centre)).sum()
}
