//! Scalar abstraction over the two working precisions.
//!
//! Attacks run at `f32` by default (matching commodity inference); oracle
//! tests run at `f64` where finite differences need the extra headroom.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type for tensors, models, and attacks.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Element width in bytes; doubles as the weight-file precision tag.
    const WIDTH: u8;

    fn write_le(self, out: &mut [u8]);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;

    fn write_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;

    fn write_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Convert an `f64` literal into the working precision.
pub(crate) fn lit<T: Scalar>(value: f64) -> T {
    T::from_f64(value).expect("literal representable in working precision")
}
