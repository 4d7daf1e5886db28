//! Orthonormal 8×8 type-II DCT and its type-III inverse, in 64-bit floats.
//!
//! Basis rows are c(k)·cos(π(2n+1)k/16) with c(0)=√(1/8) and c(k)=1/2, so
//! the transform matrix is orthogonal and Parseval holds: coefficient energy
//! equals pixel energy. A constant block of value v maps to a DC coefficient
//! of 8v.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// DCT coefficients of one 8×8 block, row-major (DC first).
#[derive(Clone, Copy, Debug)]
pub struct BlockSpectrum {
    pub coefficients: [f64; 64],
}

/// Orthonormal DCT-II matrix, row-major: basis[k*8 + n].
fn basis() -> &'static [f64; 64] {
    static BASIS: OnceLock<[f64; 64]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [0.0; 64];
        for k in 0..8 {
            let scale = if k == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for n in 0..8 {
                m[k * 8 + n] =
                    scale * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / 16.0).cos();
            }
        }
        m
    })
}

fn check_finite(block: &[f64; 64], what: &str) -> Result<()> {
    if block.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {what}")))
    }
}

/// M · X · Mᵀ with M the DCT basis (`transpose_m` swaps both products for
/// the inverse direction).
fn apply(x: &[f64; 64], transpose_m: bool) -> [f64; 64] {
    let m = basis();
    let mat = |r: usize, c: usize| {
        if transpose_m {
            m[c * 8 + r]
        } else {
            m[r * 8 + c]
        }
    };
    let mut tmp = [0.0; 64]; // M · X
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += mat(i, k) * x[k * 8 + j];
            }
            tmp[i * 8 + j] = acc;
        }
    }
    let mut out = [0.0; 64]; // (M · X) · Mᵀ
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += tmp[i * 8 + k] * mat(j, k);
            }
            out[i * 8 + j] = acc;
        }
    }
    out
}

pub fn forward(block: &[f64; 64]) -> Result<BlockSpectrum> {
    check_finite(block, "DCT input block")?;
    Ok(BlockSpectrum { coefficients: apply(block, false) })
}

pub fn inverse(spectrum: &BlockSpectrum) -> Result<[f64; 64]> {
    check_finite(&spectrum.coefficients, "inverse DCT coefficients")?;
    Ok(apply(&spectrum.coefficients, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_block(seed: u64) -> [f64; 64] {
        let mut b = [0.0; 64];
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        for v in &mut b {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (s >> 11) as f64 / (1u64 << 53) as f64 * 255.0 - 128.0;
        }
        b
    }

    #[test]
    fn constant_block_maps_to_dc_only() {
        let block = [13.25; 64];
        let spec = forward(&block).unwrap();
        assert!((spec.coefficients[0] - 8.0 * 13.25).abs() < 1e-12);
        for &ac in &spec.coefficients[1..] {
            assert!(ac.abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        for seed in 0..32 {
            let block = pseudo_block(seed);
            let back = inverse(&forward(&block).unwrap()).unwrap();
            for (a, b) in block.iter().zip(&back) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_basis_pattern_yields_one_coefficient() {
        // Build the (2,3) basis outer product; its transform is a unit
        // impulse at row 2, column 3.
        let m = basis();
        let mut block = [0.0; 64];
        for y in 0..8 {
            for x in 0..8 {
                block[y * 8 + x] = m[2 * 8 + y] * m[3 * 8 + x];
            }
        }
        let spec = forward(&block).unwrap();
        for (i, &c) in spec.coefficients.iter().enumerate() {
            let expect = if i == 2 * 8 + 3 { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 1e-12, "coefficient {i} = {c}");
        }
    }

    #[test]
    fn energy_is_preserved() {
        for seed in 100..120 {
            let block = pseudo_block(seed);
            let spec = forward(&block).unwrap();
            let ex: f64 = block.iter().map(|v| v * v).sum();
            let ec: f64 = spec.coefficients.iter().map(|v| v * v).sum();
            assert!((ex - ec).abs() < 1e-6, "{ex} vs {ec}");
        }
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let mut block = [0.0; 64];
        block[5] = f64::NAN;
        assert!(forward(&block).is_err());
    }
}
