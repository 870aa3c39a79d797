use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the numerical core is written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + ScalarOperand
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }

    /// Smallest positive value used to floor likelihood entries before taking logs.
    #[inline]
    fn underflow_floor() -> Self {
        Self::lit(1e-300).max(Self::min_positive_value())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
