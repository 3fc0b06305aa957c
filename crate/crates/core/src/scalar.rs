//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Storage width tag written into model files and caches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    F64,
}

impl ScalarKind {
    pub fn width(self) -> usize {
        match self {
            ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }
}

/// Real scalar used by embeddings, the Diff-Net and the metrics: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
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
    const KIND: ScalarKind;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the first `KIND.width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossless widening; every f32 and f64 value is representable.
    fn to_f64_exact(self) -> f64;

    fn from_f64_lossy(value: f64) -> Self;

    /// Shorthand for small literal constants.
    fn lit(value: f64) -> Self {
        Self::from_f64_lossy(value)
    }
}

impl Scalar for f32 {
    const KIND: ScalarKind = ScalarKind::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut raw = [0u8; 4];
        raw.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(raw)
    }

    fn to_f64_exact(self) -> f64 {
        f64::from(self)
    }

    fn from_f64_lossy(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(raw)
    }

    fn to_f64_exact(self) -> f64 {
        self
    }

    fn from_f64_lossy(value: f64) -> Self {
        value
    }
}
