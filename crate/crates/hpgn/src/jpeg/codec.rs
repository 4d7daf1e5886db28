//! Simulated JPEG round trip: colorspace, padding, blockwise quantization.
//!
//! No bitstream is produced; the network only ever consumes pixels, so
//! quantization is the sole distortion source worth modeling. Chroma is kept
//! at full resolution (no subsampling) and all arithmetic runs in f64, which
//! makes the round trip bit-reproducible.
//!
//! Colorspace is BT.601 full range with the coefficients fixed at four
//! decimal places:
//!
//! ```text
//! Y  =  0.2990 R + 0.5870 G + 0.1140 B
//! Cb = -0.1687 R - 0.3313 G + 0.5000 B + 128
//! Cr =  0.5000 R - 0.4187 G - 0.0813 B + 128
//! R  =  Y + 1.4020 (Cr-128)
//! G  =  Y - 0.3441 (Cb-128) - 0.7141 (Cr-128)
//! B  =  Y + 1.7720 (Cb-128)
//! ```

use image::RgbImage;

use crate::error::{Error, Result};

use super::dct;
use super::{qf_to_qm, ChannelKind, QualityFactor, QuantizationMatrix};

fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = 0.2990 * r + 0.5870 * g + 0.1140 * b;
    let cb = -0.1687 * r - 0.3313 * g + 0.5000 * b + 128.0;
    let cr = 0.5000 * r - 0.4187 * g - 0.0813 * b + 128.0;
    (y, cb, cr)
}

fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + 1.4020 * (cr - 128.0);
    let g = y - 0.3441 * (cb - 128.0) - 0.7141 * (cr - 128.0);
    let b = y + 1.7720 * (cb - 128.0);
    (r, g, b)
}

/// Y/Cb/Cr planes padded to multiples of 8 by edge replication.
struct Planes {
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    data: [Vec<f64>; 3],
}

fn to_planes(img: &RgbImage) -> Result<Planes> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if h < 8 || w < 8 {
        return Err(Error::Dim(format!(
            "compression round trip needs at least 8x8 pixels, got {w}x{h}"
        )));
    }
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let mut data = [vec![0.0; ph * pw], vec![0.0; ph * pw], vec![0.0; ph * pw]];
    for py in 0..ph {
        let sy = py.min(h - 1);
        for px in 0..pw {
            let sx = px.min(w - 1);
            let p = img.get_pixel(sx as u32, sy as u32);
            let (y, cb, cr) = rgb_to_ycbcr(f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
            let i = py * pw + px;
            data[0][i] = y;
            data[1][i] = cb;
            data[2][i] = cr;
        }
    }
    Ok(Planes { h, w, ph, pw, data })
}

/// Visit each 8×8 block of a plane: extract, transform, write back.
fn each_block(plane: &mut [f64], ph: usize, pw: usize, mut f: impl FnMut(&mut [f64; 64]) -> Result<()>) -> Result<()> {
    let mut block = [0.0; 64];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            for y in 0..8 {
                block[y * 8..y * 8 + 8].copy_from_slice(&plane[(by + y) * pw + bx..][..8]);
            }
            f(&mut block)?;
            for y in 0..8 {
                plane[(by + y) * pw + bx..][..8].copy_from_slice(&block[y * 8..y * 8 + 8]);
            }
        }
    }
    Ok(())
}

fn quantize_plane(plane: &mut [f64], ph: usize, pw: usize, qm: &QuantizationMatrix) -> Result<()> {
    each_block(plane, ph, pw, |block| {
        for v in block.iter_mut() {
            *v -= 128.0;
        }
        let spec = dct::forward(block)?;
        let mut deq = spec;
        for (c, &q) in deq.coefficients.iter_mut().zip(qm.entries()) {
            let q = f64::from(q);
            // round half away from zero, then expand back
            *c = (*c / q).round() * q;
        }
        *block = dct::inverse(&deq)?;
        for v in block.iter_mut() {
            *v += 128.0;
        }
        Ok(())
    })
}

/// Compress-then-decompress an image at the given quality factor.
pub fn compress_roundtrip(img: &RgbImage, qf: QualityFactor) -> Result<RgbImage> {
    let mut planes = to_planes(img)?;
    let luma = qf_to_qm(qf, ChannelKind::Luma);
    let chroma = qf_to_qm(qf, ChannelKind::Chroma);
    quantize_plane(&mut planes.data[0], planes.ph, planes.pw, &luma)?;
    quantize_plane(&mut planes.data[1], planes.ph, planes.pw, &chroma)?;
    quantize_plane(&mut planes.data[2], planes.ph, planes.pw, &chroma)?;
    let mut out = RgbImage::new(planes.w as u32, planes.h as u32);
    for y in 0..planes.h {
        for x in 0..planes.w {
            let i = y * planes.pw + x;
            let (r, g, b) = ycbcr_to_rgb(planes.data[0][i], planes.data[1][i], planes.data[2][i]);
            let px = image::Rgb([
                r.round().clamp(0.0, 255.0) as u8,
                g.round().clamp(0.0, 255.0) as u8,
                b.round().clamp(0.0, 255.0) as u8,
            ]);
            out.put_pixel(x as u32, y as u32, px);
        }
    }
    Ok(out)
}

/// How strongly the image's DCT coefficients snap to multiples of this
/// table. 0 means perfectly quantized, 1 matches an unquantized image.
fn snap_score(planes: &mut Planes, qf: QualityFactor) -> Result<Option<f64>> {
    let tables = [
        qf_to_qm(qf, ChannelKind::Luma),
        qf_to_qm(qf, ChannelKind::Chroma),
        qf_to_qm(qf, ChannelKind::Chroma),
    ];
    let mut total = 0.0;
    let mut count = 0usize;
    for (plane, qm) in planes.data.iter_mut().zip(&tables) {
        each_block(plane, planes.ph, planes.pw, |block| {
            let mut shifted = *block;
            for v in shifted.iter_mut() {
                *v -= 128.0;
            }
            let spec = dct::forward(&shifted)?;
            for (c, &q) in spec.coefficients.iter().zip(qm.entries()) {
                let q = f64::from(q);
                // Coefficients that quantize to zero, or steps drowned out
                // by pixel rounding noise, carry no signal.
                if q < 4.0 || c.abs() < q / 2.0 {
                    continue;
                }
                let dev = (c - (c / q).round() * q).abs();
                total += dev / (q / 4.0);
                count += 1;
            }
            Ok(())
        })?;
    }
    Ok((count >= 100).then(|| total / count as f64))
}

/// Estimate the quality factor an already-compressed image went through:
/// search {10, 20, …, 100} for the minimal requantization residual. QF 100
/// never scores (its table is too fine to measure), so it is the answer
/// exactly when no coarser table snaps, i.e. the image looks uncompressed.
pub fn estimate_qf(img: &RgbImage) -> Result<QualityFactor> {
    let mut planes = to_planes(img)?;
    let mut best: Option<(f64, QualityFactor)> = None;
    for qf in (10..=100).step_by(10) {
        let qf = QualityFactor::new(qf)?;
        if let Some(score) = snap_score(&mut planes, qf)? {
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, qf));
            }
        }
    }
    match best {
        Some((score, qf)) if score < 0.35 => Ok(qf),
        _ => QualityFactor::new(100),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::busy_image;

    fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
        let mut se = 0.0f64;
        for (pa, pb) in a.pixels().zip(b.pixels()) {
            for c in 0..3 {
                let d = f64::from(pa[c]) - f64::from(pb[c]);
                se += d * d;
            }
        }
        let mse = se / (a.width() * a.height() * 3) as f64;
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }

    #[test]
    fn rejects_tiny_images() {
        let img = RgbImage::new(7, 20);
        assert!(compress_roundtrip(&img, QualityFactor::new(80).unwrap()).is_err());
    }

    #[test]
    fn quality_100_only_costs_the_colorspace() {
        let img = busy_image(48, 40, 3);
        let out = compress_roundtrip(&img, QualityFactor::new(100).unwrap()).unwrap();
        assert!(psnr(&img, &out) >= 45.0);
    }

    #[test]
    fn flat_gray_survives_within_one_level() {
        for qf in [50, 75, 90, 100] {
            let img = RgbImage::from_pixel(24, 16, image::Rgb([77, 77, 77]));
            let out = compress_roundtrip(&img, QualityFactor::new(qf).unwrap()).unwrap();
            for p in out.pixels() {
                for c in 0..3 {
                    assert!((i16::from(p[c]) - 77).abs() <= 1, "qf {qf}: {:?}", p);
                }
            }
        }
    }

    #[test]
    fn harsher_quantization_hurts_more() {
        let img = busy_image(64, 64, 9);
        let hi = compress_roundtrip(&img, QualityFactor::new(90).unwrap()).unwrap();
        let lo = compress_roundtrip(&img, QualityFactor::new(10).unwrap()).unwrap();
        assert!(psnr(&img, &hi) > psnr(&img, &lo));
    }

    #[test]
    fn round_trip_is_deterministic() {
        let img = busy_image(40, 56, 21);
        let qf = QualityFactor::new(35).unwrap();
        let a = compress_roundtrip(&img, qf).unwrap();
        let b = compress_roundtrip(&img, qf).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn non_multiple_of_8_sizes_round_trip() {
        let img = busy_image(50, 43, 5);
        let out = compress_roundtrip(&img, QualityFactor::new(60).unwrap()).unwrap();
        assert_eq!((out.width(), out.height()), (50, 43));
    }

    #[test]
    fn estimates_the_quality_it_was_compressed_at() {
        let img = busy_image(96, 96, 14);
        for qf in [10, 30, 50, 80] {
            let compressed =
                compress_roundtrip(&img, QualityFactor::new(qf).unwrap()).unwrap();
            let est = estimate_qf(&compressed).unwrap();
            assert_eq!(i64::from(est.get()), qf, "estimated {est} for qf {qf}");
        }
        // An image that never went through quantization reads as QF 100.
        assert_eq!(estimate_qf(&img).unwrap().get(), 100);
    }
}
