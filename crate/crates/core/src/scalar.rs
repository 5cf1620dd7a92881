use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element precision tag, stored alongside serialized tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Real element type of a tensor. `f32` is used for training, `f64` for
/// gradient verification.
pub trait Scalar:
    Float
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Parses a decimal directly at this precision (no double rounding).
    fn parse_decimal(s: &str) -> Option<Self>;

    fn to_le_bytes_vec(self, out: &mut alloc::vec::Vec<u8>);
    fn from_le_slice(bytes: &[u8]) -> Self;

    #[inline]
    fn from_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Scalar for f32 {
    fn parse_decimal(s: &str) -> Option<Self> {
        s.parse::<f32>().ok()
    }

    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn to_le_bytes_vec(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(b)
    }
}

impl Scalar for f64 {
    fn parse_decimal(s: &str) -> Option<Self> {
        s.parse::<f64>().ok()
    }

    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn to_le_bytes_vec(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
}
