//! Scalar abstraction for the numerics.
//!
//! Everything downstream is generic over [`Real`]; `f64` is the default used
//! by the concrete aliases at the crate root, `f32` exists mainly to keep the
//! code honest about precision assumptions.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` literal. Panics on values not representable at all
    /// (never happens for the finite constants used here).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn from_usize_(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn two() -> Self {
        Self::of(2.0)
    }

    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sum in a fixed binary-tree order, independent of any parallel chunking the
/// caller used to produce `xs`. Reductions throughout the crate go through
/// this so that worker count never changes results.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    if xs.len() <= 8 {
        let mut acc = T::zero();
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean and (unbiased) sample standard deviation via pairwise sums.
pub fn mean_and_sd<T: Real>(xs: &[T]) -> (T, T) {
    let n = T::from_usize_(xs.len());
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let sq: Vec<T> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - T::one());
    (mean, var.sqrt())
}
