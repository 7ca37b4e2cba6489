//! Fixed-width little-endian float serialization of exchanged matrices and
//! parameter vectors. Measured communication is the length of these buffers.

use std::fmt;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LogitMatrix;

/// Width of one transmitted scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum ScalarWidth {
    B16,
    B32,
    B64,
}

impl ScalarWidth {
    pub fn bits(self) -> u32 {
        match self {
            ScalarWidth::B16 => 16,
            ScalarWidth::B32 => 32,
            ScalarWidth::B64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }
}

impl TryFrom<u32> for ScalarWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            16 => Ok(ScalarWidth::B16),
            32 => Ok(ScalarWidth::B32),
            64 => Ok(ScalarWidth::B64),
            _ => Err(Error::config(format!("payload width must be 16, 32 or 64 bits, got {bits}"))),
        }
    }
}

impl From<ScalarWidth> for u32 {
    fn from(w: ScalarWidth) -> u32 {
        w.bits()
    }
}

impl fmt::Display for ScalarWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Serialized scalars as they would cross the link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    width: ScalarWidth,
    bytes: Vec<u8>,
}

impl Payload {
    pub fn encode(values: &[f64], width: ScalarWidth) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * width.bytes());
        for &v in values {
            match width {
                ScalarWidth::B16 => bytes.extend_from_slice(&f16::from_f64(v).to_le_bytes()),
                ScalarWidth::B32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                ScalarWidth::B64 => bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Self { width, bytes }
    }

    /// Row-major: sample order, then class order.
    pub fn encode_matrix(m: &LogitMatrix, width: ScalarWidth) -> Self {
        Self::encode(m.as_slice(), width)
    }

    pub fn decode(&self) -> Vec<f64> {
        let w = self.width.bytes();
        self.bytes
            .chunks_exact(w)
            .map(|c| match self.width {
                ScalarWidth::B16 => f16::from_le_bytes([c[0], c[1]]).to_f64(),
                ScalarWidth::B32 => f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64,
                ScalarWidth::B64 => f64::from_le_bytes(c.try_into().expect("8-byte chunk")),
            })
            .collect()
    }

    pub fn decode_matrix(&self, rows: usize, cols: usize) -> Result<LogitMatrix> {
        LogitMatrix::from_vec(rows, cols, self.decode())
    }

    pub fn width(&self) -> ScalarWidth {
        self.width
    }

    pub fn scalars(&self) -> usize {
        self.bytes.len() / self.width.bytes()
    }

    pub fn bit_len(&self) -> u128 {
        self.bytes.len() as u128 * 8
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_length_is_scalars_times_width() {
        let m = LogitMatrix::zeros(1000, 5);
        assert_eq!(Payload::encode_matrix(&m, ScalarWidth::B32).bit_len(), 160_000);
        assert_eq!(Payload::encode_matrix(&m, ScalarWidth::B16).bit_len(), 80_000);
        assert_eq!(Payload::encode(&[], ScalarWidth::B64).bit_len(), 0);
    }

    #[test]
    fn sixty_four_bits_is_lossless() {
        let v = vec![0.1, -3.25e-7, 1e300, f64::MIN_POSITIVE];
        assert_eq!(Payload::encode(&v, ScalarWidth::B64).decode(), v);
    }

    #[test]
    fn narrow_widths_round() {
        let back = Payload::encode(&[0.1], ScalarWidth::B32).decode()[0];
        assert_eq!(back, 0.1f32 as f64);
        let back = Payload::encode(&[0.1], ScalarWidth::B16).decode()[0];
        assert!((back - 0.1).abs() < 1e-3);
    }

    #[test]
    fn width_parsing() {
        assert_eq!(ScalarWidth::try_from(32).unwrap(), ScalarWidth::B32);
        assert!(ScalarWidth::try_from(8).is_err());
    }
}
