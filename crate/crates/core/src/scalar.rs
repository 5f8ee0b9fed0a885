//! Scalar abstraction shared by the similarity, ranking and filtering code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar usable for embeddings, similarity scores and thresholds.
///
/// Implemented for `f32` and `f64`. Accumulations that feed threshold
/// comparisons are always carried out in `f64` regardless of `Self`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn to_f64_lossless(self) -> f64 {
        // Float -> f64 never fails for f32/f64.
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_rounded(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}
