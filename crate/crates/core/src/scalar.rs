//! The floating point abstraction every numeric routine is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive};
use rustfft::FftNum;

/// Real scalar usable by the solver, the linear algebra and the models.
///
/// `FftNum` pulls in `num_traits::Signed`, whose `abs`/`signum` collide with
/// `Float`'s; call those through `Float::abs(x)` in generic code.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + FftNum
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal or parameter.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Rounds through IEEE binary32, the on-disk snapshot precision.
    fn round_to_f32(self) -> Self {
        Self::lit(self.to_f64_lossy() as f32 as f64)
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}
