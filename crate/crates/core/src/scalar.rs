//! Floating-point scalar abstraction shared by every scoring path.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point: f32 or f64.
///
/// Embeddings are stored as `f32` on disk and scored as `f64` by the
/// evaluation harness; the math in [`crate::embed`], [`crate::prototypes`]
/// and [`crate::fusion`] works for either.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-or-rounding conversion from an `f64` constant.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    fn from_usize_exact(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
