//! Floating-point abstraction the numeric core is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Scalar type for tensors, model parameters and the optimizer.
///
/// Implemented for `f32` and `f64`; everything downstream (autodiff, model,
/// training) is generic over it. `f64` is the default lane so that the
/// finite-difference checks are meaningful; `f32` is an opt-in for speed.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Name used in checkpoint headers ("f32" / "f64").
    const DTYPE: &'static str;
    /// Width in bytes of the little-endian on-disk encoding.
    const BYTES: usize;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bytes() {
        let mut buf = Vec::new();
        1.25f64.write_le(&mut buf);
        (-3.5f64).write_le(&mut buf);
        assert_eq!(f64::read_le(&buf[0..8]), 1.25);
        assert_eq!(f64::read_le(&buf[8..16]), -3.5);

        let mut buf = Vec::new();
        0.5f32.write_le(&mut buf);
        assert_eq!(f32::read_le(&buf), 0.5);
    }

    #[test]
    fn converts_through_f64() {
        assert_eq!(<f32 as Scalar>::of(0.25).as_f64(), 0.25);
        assert_eq!(<f64 as Scalar>::of(-1e30).as_f64(), -1e30);
    }
}
