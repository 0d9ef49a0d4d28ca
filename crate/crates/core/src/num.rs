//! Scalar abstraction shared by every numeric kernel.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the model state and kernels are generic over: `f32` or `f64`.
///
/// `Debug`/`FromStr` are required so text outputs round-trip bit-exactly
/// (Rust prints the shortest representation that parses back to the same value).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Display
    + Debug
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, rounding to nearest.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest value strictly below one.
    #[inline]
    fn below_one() -> Self {
        Self::one() - Self::epsilon() / (Self::one() + Self::one())
    }
}

impl Real for f32 {}
impl Real for f64 {}
