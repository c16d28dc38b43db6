//! Floating-point element abstraction shared by every dense operation.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::dtf::DtfElement;

/// Real scalar used for mask assignments, class scores and anomaly maps.
///
/// Implemented for `f32` (the interchange default) and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + DtfElement + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Index of the largest element, ties resolved toward the smallest index.
///
/// Returns `None` for an empty slice. NaN never wins a comparison.
#[inline]
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut iter = values.iter().enumerate();
    let (mut best_idx, mut best) = iter.next().map(|(i, v)| (i, *v))?;
    for (i, &v) in iter {
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    Some(best_idx)
}

/// Numerically stable `ln Σ exp(beta·x_k) / beta`.
#[inline]
pub fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone, beta: T) -> T {
    let max = values.clone().fold(T::neg_infinity(), |a, b| a.max(b));
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = values.map(|v| (beta * (v - max)).exp()).sum();
    max + sum.ln() / beta
}
