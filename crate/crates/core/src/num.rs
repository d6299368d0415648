//! Scalar abstraction for the numeric parts of the pipeline.
//!
//! Likelihood ratios, similarity scores and thresholds are computed in any
//! [`Real`] type. `f64` is the default used by the CLI and the root type
//! aliases; `f32` works for memory-constrained batch scoring.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts a count, saturating through `f64` for huge values.
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).unwrap_or_else(Self::infinity)
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    /// Tolerance used when checking that weights sum to one.
    fn weight_tolerance() -> Self {
        Self::from_f64_lossy(1e-6)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Ratio of two counts, `0/0` mapped to `empty`.
pub fn ratio<T: Real>(num: usize, den: usize, empty: T) -> T {
    if den == 0 {
        empty
    } else {
        T::from_count(num as u64) / T::from_count(den as u64)
    }
}
