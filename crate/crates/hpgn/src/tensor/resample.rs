//! Factor-2 spatial resampling: 2×2 average pooling down, bilinear up.
//!
//! Upsampling samples at `src = i/2 - 0.25` (half-pixel centers), clamped at
//! the borders, so every tap weight is exactly 1, 0.75, or 0.25 and the
//! spatial mean of the output equals the spatial mean of the input.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

pub fn down2_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dim(format!(
            "2x2 pooling needs even extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let quarter = T::from_f64(0.25);
    let src = x.data();
    let dst = out.data_mut();
    for nc in 0..n * c {
        let plane = &src[nc * h * w..];
        let opl = &mut dst[nc * oh * ow..(nc + 1) * oh * ow];
        for oy in 0..oh {
            let r0 = &plane[(2 * oy) * w..];
            let r1 = &plane[(2 * oy + 1) * w..];
            for ox in 0..ow {
                opl[oy * ow + ox] =
                    (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub fn down2_backward<T: Scalar>(n: usize, c: usize, h: usize, w: usize, g: &[T], dx: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    for nc in 0..n * c {
        let gpl = &g[nc * oh * ow..];
        let dpl = &mut dx[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gpl[oy * ow + ox] * quarter;
                dpl[(2 * oy) * w + 2 * ox] += gv;
                dpl[(2 * oy) * w + 2 * ox + 1] += gv;
                dpl[(2 * oy + 1) * w + 2 * ox] += gv;
                dpl[(2 * oy + 1) * w + 2 * ox + 1] += gv;
            }
        }
    }
}

/// Source taps for one axis of the 2x upsample: output index i reads input
/// rows (i0, i1) with weights (w0, w1).
fn axis_taps<T: Scalar>(extent: usize) -> Vec<(usize, usize, T, T)> {
    let (hi, lo) = (T::from_f64(0.75), T::from_f64(0.25));
    (0..2 * extent)
        .map(|i| {
            let src = i as f64 / 2.0 - 0.25;
            if src <= 0.0 {
                (0, 0, T::one(), T::zero())
            } else {
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(extent - 1);
                if i % 2 == 0 {
                    (i0, i1, lo, hi) // src = j - 0.25 sits above row j-1
                } else {
                    (i0, i1, hi, lo) // src = j + 0.25 sits below row j
                }
            }
        })
        .collect()
}

pub fn up2_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let ytaps = axis_taps::<T>(h);
    let xtaps = axis_taps::<T>(w);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    // Separable: widen each row once, then blend row pairs vertically.
    let mut tmp = vec![T::zero(); h * ow];
    for nc in 0..n * c {
        let plane = &src[nc * h * w..(nc + 1) * h * w];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let trow = &mut tmp[y * ow..(y + 1) * ow];
            for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
                trow[ox] = wx0 * row[x0] + wx1 * row[x1];
            }
        }
        let opl = &mut dst[nc * oh * ow..(nc + 1) * oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
            let t0 = &tmp[y0 * ow..y0 * ow + ow];
            let t1 = &tmp[y1 * ow..y1 * ow + ow];
            let orow = &mut opl[oy * ow..(oy + 1) * ow];
            for ((o, a), b) in orow.iter_mut().zip(t0).zip(t1) {
                *o = wy0 * *a + wy1 * *b;
            }
        }
    }
    Ok(out)
}

pub fn up2_backward<T: Scalar>(n: usize, c: usize, h: usize, w: usize, g: &[T], dx: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    let ytaps = axis_taps::<T>(h);
    let xtaps = axis_taps::<T>(w);
    // Transpose of the separable forward: collapse output rows onto the
    // widened plane, then scatter columns back.
    let mut dtmp = vec![T::zero(); h * ow];
    for nc in 0..n * c {
        dtmp.fill(T::zero());
        let gpl = &g[nc * oh * ow..];
        for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
            let grow = &gpl[oy * ow..(oy + 1) * ow];
            let drow = &mut dtmp[y0 * ow..(y0 + 1) * ow];
            for (d, gv) in drow.iter_mut().zip(grow) {
                *d += wy0 * *gv;
            }
            let drow = &mut dtmp[y1 * ow..(y1 + 1) * ow];
            for (d, gv) in drow.iter_mut().zip(grow) {
                *d += wy1 * *gv;
            }
        }
        let dpl = &mut dx[nc * h * w..(nc + 1) * h * w];
        for y in 0..h {
            let trow = &dtmp[y * ow..(y + 1) * ow];
            let drow = &mut dpl[y * w..(y + 1) * w];
            for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
                drow[x0] += wx0 * trow[ox];
                drow[x1] += wx1 * trow[ox];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Vec<usize>) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i * 31 + 3) % 17) as f64 * 0.3).collect()).unwrap()
    }

    #[test]
    fn down2_averages_blocks() {
        let x = Tensor::<f64>::new(vec![1, 1, 2, 4], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let y = down2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[3.5, 5.5]);
    }

    #[test]
    fn down2_rejects_odd_extent() {
        assert!(down2_forward(&Tensor::<f64>::zeros(vec![1, 1, 3, 4])).is_err());
    }

    #[test]
    fn up2_keeps_constant_planes_constant() {
        let x = Tensor::<f64>::full(vec![1, 2, 3, 3], 0.7);
        let y = up2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 6]);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn up2_preserves_spatial_mean() {
        let x = ramp(vec![2, 3, 5, 4]);
        let y = up2_forward(&x).unwrap();
        let mean = |t: &Tensor<f64>| t.data().iter().sum::<f64>() / t.numel() as f64;
        assert!((mean(&x) - mean(&y)).abs() < 1e-12);
    }

    #[test]
    fn up2_interior_uses_quarter_offsets() {
        // One axis: [a, b] -> [a, 0.75a+0.25b, 0.25a+0.75b, b]; the single
        // input row clamps into two identical output rows.
        let x = Tensor::<f64>::new(vec![1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = up2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }
}
