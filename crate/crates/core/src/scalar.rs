//! The floating-point abstraction the statistics code is written against.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// A real scalar usable by the analytics routines. Implemented for `f32` and `f64`.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Sum<Self> + Send + Sync + 'static {
    /// Converts an `f64` constant. Every constant used here is representable.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite constant")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count fits in a float")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

/// Sum of squared deviations from the mean.
pub(crate) fn sum_sq_dev<T: Scalar>(xs: &[T], about: T) -> T {
    xs.iter().map(|&x| (x - about) * (x - about)).sum()
}
