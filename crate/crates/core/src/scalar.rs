//! Floating point abstraction shared by the whole crate.
//!
//! Everything numeric (tensors, the lattice dynamic programs, embeddings and
//! the model itself) is generic over [`Scalar`], which is implemented for
//! `f32` (the training default) and `f64` (used for oracle comparisons).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tag written into serialized files.
    const DTYPE: &'static str;
    /// Width of one serialized value.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);

    /// Panics if `bytes.len() != Self::BYTES`.
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// `self`, or zero if it is subnormal. Saturated softmaxes and sigmoids
    /// otherwise fill trained models with subnormals, which slow every
    /// later multiplication several times over.
    #[inline]
    fn flush(self) -> Self {
        if self.abs() < Self::min_positive_value() {
            Self::zero()
        } else {
            self
        }
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Overflow-safe `ln(Σ exp(x))`. Returns `-inf` for an empty slice or when
/// every entry is `-inf`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_is_overflow_safe() {
        let v = log_sum_exp(&[1000.0f32, 1000.0]);
        assert!(v.is_finite());
        assert!((v - (1000.0 + std::f32::consts::LN_2)).abs() < 1e-3);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn flush_zeroes_only_subnormals() {
        assert_eq!((f32::MIN_POSITIVE / 2.0).flush(), 0.0);
        assert_eq!((-f64::MIN_POSITIVE / 4.0).flush(), 0.0);
        assert_eq!(f32::MIN_POSITIVE.flush(), f32::MIN_POSITIVE);
        assert_eq!((-1.5f64).flush(), -1.5);
        assert!(f32::NAN.flush().is_nan());
        assert_eq!(f64::NEG_INFINITY.flush(), f64::NEG_INFINITY);
    }

    #[test]
    fn byte_round_trip() {
        let mut buf = Vec::new();
        1.25f32.write_le(&mut buf);
        (-3.5f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.25);
        assert_eq!(f64::read_le(&buf[4..]), -3.5);
    }
}
