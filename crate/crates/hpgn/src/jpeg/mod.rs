//! JPEG compression priors: quality factor, quantization matrices, and the
//! blockwise DCT round trip that simulates compression distortion.
//!
//! The two priors the enhancement network consumes are the scalar quality
//! factor (QF) and the 8×8 quantization matrix (QM) it expands to. Matrices
//! come from the standard luma/chroma base tables under the usual integer
//! scaling law, so they match what a reference encoder embeds in its files.

pub mod codec;
pub mod dct;

pub use codec::{compress_roundtrip, estimate_qf};

use std::fmt;

use crate::error::{Error, Result};

/// JPEG quality factor, restricted to [1, 100] at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualityFactor(u8);

impl QualityFactor {
    pub fn new(value: i64) -> Result<Self> {
        if (1..=100).contains(&value) {
            Ok(QualityFactor(value as u8))
        } else {
            Err(Error::Contract(format!(
                "quality factor must be in [1, 100], got {value}"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// QF mapped to (0, 1] for network conditioning.
    pub fn normalized(self) -> f64 {
        f64::from(self.0) / 100.0
    }
}

impl fmt::Display for QualityFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Luma,
    Chroma,
}

/// Standard base luma table, row-major.
pub const BASE_LUMA: [u8; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard base chroma table, row-major.
pub const BASE_CHROMA: [u8; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// 8×8 quantization table with entries in [1, 255], row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantizationMatrix {
    entries: [u8; 64],
    kind: ChannelKind,
}

/// Integer scale percentage applied to the base tables: 5000/qf below 50,
/// otherwise 200 − 2·qf.
pub fn qf_to_scale(qf: QualityFactor) -> u32 {
    let qf = u32::from(qf.get());
    if qf < 50 {
        5000 / qf
    } else {
        200 - 2 * qf
    }
}

/// Scale the base table for `kind`, rounding down with a half-up offset and
/// clamping into [1, 255]. QF 100 yields the all-ones matrix.
pub fn qf_to_qm(qf: QualityFactor, kind: ChannelKind) -> QuantizationMatrix {
    let base = match kind {
        ChannelKind::Luma => &BASE_LUMA,
        ChannelKind::Chroma => &BASE_CHROMA,
    };
    let scale = qf_to_scale(qf);
    let mut entries = [0u8; 64];
    for (e, &b) in entries.iter_mut().zip(base) {
        let scaled = (u32::from(b) * scale + 50) / 100;
        *e = scaled.clamp(1, 255) as u8;
    }
    QuantizationMatrix { entries, kind }
}

impl QuantizationMatrix {
    pub fn entries(&self) -> &[u8; 64] {
        &self.entries
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn entry(&self, row: usize, col: usize) -> u8 {
        self.entries[row * 8 + col]
    }

    /// Row-major flatten divided by 255, each entry in (0, 1].
    pub fn feature_vector(&self) -> [f64; 64] {
        let mut v = [0.0; 64];
        for (f, &e) in v.iter_mut().zip(&self.entries) {
            *f = f64::from(e) / 255.0;
        }
        v
    }
}
