//! Numeric abstraction shared by metrics, weights, and vote scores.
//!
//! Everything that only needs field arithmetic and ordering is generic over
//! [`Scalar`], which covers both `f64` and exact rationals. Cosine similarity
//! needs square roots and is bounded on [`num_traits::Float`] instead.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Exact rational scalar, used by the test oracles and anywhere tie handling
/// has to be bit-exact.
pub type Exact = Ratio<i64>;

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// `num / den`, with `0 / 0` defined as zero.
    fn ratio_or_zero(num: usize, den: usize) -> Self {
        if den == 0 {
            Self::zero()
        } else {
            Self::from_count(num) / Self::from_count(den)
        }
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}
