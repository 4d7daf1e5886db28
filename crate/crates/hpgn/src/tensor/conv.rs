//! 2-d convolution (N×C×H×W, cross-correlation) via im2col and GEMM.
//!
//! Forward lowers each batch item to a column matrix and runs one GEMM per
//! group. Backward is three GEMMs: grad-weight against the recomputed column
//! matrix, grad-input through a transposed GEMM followed by a col2im
//! scatter-add, and a plain reduction for the bias. 1×1/stride-1/no-pad convs
//! skip the column buffer and use the input storage directly.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn unit() -> Self {
        ConvSpec { stride: 1, padding: 0, groups: 1 }
    }
}

pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_dims<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<ConvDims> {
    let (n, c_in, h, w) = x.dims4()?;
    let (c_out, wc, kh, kw) = weight.dims4()?;
    if spec.stride == 0 || spec.groups == 0 {
        return Err(Error::Dim("conv stride and groups must be nonzero".into()));
    }
    if c_in % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(Error::Dim(format!(
            "conv channels ({c_in} in, {c_out} out) not divisible by groups {}",
            spec.groups
        )));
    }
    if wc != c_in / spec.groups {
        return Err(Error::Dim(format!(
            "weight expects {wc} input channels per group, input has {}",
            c_in / spec.groups
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::Dim(format!(
                "bias shape {:?} does not match {c_out} output channels",
                b.shape()
            )));
        }
    }
    if h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
        return Err(Error::Dim(format!(
            "kernel {kh}x{kw} exceeds padded input {}x{}",
            h + 2 * spec.padding,
            w + 2 * spec.padding
        )));
    }
    let oh = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let ow = (w + 2 * spec.padding - kw) / spec.stride + 1;
    Ok(ConvDims { n, c_in, h, w, c_out, kh, kw, oh, ow })
}

/// Fill `col` (cg_in*kh*kw rows by oh*ow columns, row-major) from one group's
/// channel block of one batch item.
fn im2col<T: Scalar>(x_group: &[T], d: &ConvDims, spec: ConvSpec, col: &mut [T]) {
    let cg_in = d.c_in / spec.groups;
    let m = d.oh * d.ow;
    let (p, s) = (spec.padding, spec.stride);
    for ci in 0..cg_in {
        let plane = &x_group[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &mut col[((ci * d.kh + ky) * d.kw + kx) * m..][..m];
                for oy in 0..d.oh {
                    let iy = oy * s + ky;
                    let dst = &mut row[oy * d.ow..(oy + 1) * d.ow];
                    if iy < p || iy >= d.h + p {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[(iy - p) * d.w..(iy - p + 1) * d.w];
                    if s == 1 {
                        // ox + kx must land in [p, w+p)
                        let (lo, hi) = span1(d, p, kx);
                        if hi <= lo {
                            dst.fill(T::zero());
                            continue;
                        }
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        dst[lo..hi].copy_from_slice(&src_row[lo + kx - p..hi + kx - p]);
                    } else {
                        for (ox, v) in dst.iter_mut().enumerate() {
                            let ix = ox * s + kx;
                            *v = if ix < p || ix >= d.w + p {
                                T::zero()
                            } else {
                                src_row[ix - p]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the column-matrix gradient back onto one group's input block.
fn col2im_add<T: Scalar>(col: &[T], d: &ConvDims, spec: ConvSpec, dx_group: &mut [T]) {
    let cg_in = d.c_in / spec.groups;
    let m = d.oh * d.ow;
    let (p, s) = (spec.padding, spec.stride);
    for ci in 0..cg_in {
        let plane = &mut dx_group[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &col[((ci * d.kh + ky) * d.kw + kx) * m..][..m];
                for oy in 0..d.oh {
                    let iy = oy * s + ky;
                    if iy < p || iy >= d.h + p {
                        continue;
                    }
                    let dst_row = &mut plane[(iy - p) * d.w..(iy - p + 1) * d.w];
                    if s == 1 {
                        let (lo, hi) = span1(d, p, kx);
                        if hi <= lo {
                            continue;
                        }
                        let src = &row[oy * d.ow + lo..oy * d.ow + hi];
                        let dst = &mut dst_row[lo + kx - p..hi + kx - p];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += *sv;
                        }
                    } else {
                        for ox in 0..d.ow {
                            let ix = ox * s + kx;
                            if ix >= p && ix < d.w + p {
                                dst_row[ix - p] += row[oy * d.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row span shared by the stride-1 kernels: output columns `lo..hi` read
/// input columns `lo+kx-p..hi+kx-p`.
fn span1(d: &ConvDims, p: usize, kx: usize) -> (usize, usize) {
    (p.saturating_sub(kx), (d.w + p).saturating_sub(kx).min(d.ow))
}

/// Stride-1 shifted-plane kernel for narrow outputs (attention heads,
/// depthwise groups). GEMM wastes most of its packing work when a group
/// produces one or two rows, so accumulate row axpys instead.
fn conv_direct_fwd<T: Scalar>(
    x_group: &[T],
    w_group: &[T],
    d: &ConvDims,
    p: usize,
    cg_in: usize,
    cg_out: usize,
    out_group: &mut [T],
) {
    for co in 0..cg_out {
        for ci in 0..cg_in {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = w_group[((co * cg_in + ci) * d.kh + ky) * d.kw + kx];
                    let (lo, hi) = span1(d, p, kx);
                    if hi <= lo {
                        continue;
                    }
                    for oy in p.saturating_sub(ky)..(d.h + p).saturating_sub(ky).min(d.oh) {
                        let iy = oy + ky - p;
                        let src = &x_group[ci * d.h * d.w + iy * d.w + lo + kx - p..][..hi - lo];
                        let dst = &mut out_group[co * d.oh * d.ow + oy * d.ow + lo..][..hi - lo];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += wv * *sv;
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of `conv_direct_fwd`: scatter output gradient back to the input.
#[allow(clippy::too_many_arguments)]
fn conv_direct_bwd_input<T: Scalar>(
    g_group: &[T],
    w_group: &[T],
    d: &ConvDims,
    p: usize,
    cg_in: usize,
    cg_out: usize,
    dx_group: &mut [T],
) {
    for co in 0..cg_out {
        for ci in 0..cg_in {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = w_group[((co * cg_in + ci) * d.kh + ky) * d.kw + kx];
                    let (lo, hi) = span1(d, p, kx);
                    if hi <= lo {
                        continue;
                    }
                    for oy in p.saturating_sub(ky)..(d.h + p).saturating_sub(ky).min(d.oh) {
                        let iy = oy + ky - p;
                        let src = &g_group[co * d.oh * d.ow + oy * d.ow + lo..][..hi - lo];
                        let dst = &mut dx_group[ci * d.h * d.w + iy * d.w + lo + kx - p..][..hi - lo];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += wv * *sv;
                        }
                    }
                }
            }
        }
    }
}

/// Eight-lane dot product; independent accumulators keep the reduction out
/// of a serial FMA dependency chain so it vectorizes.
fn dot_lanes<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut lanes = [T::zero(); LANES];
    let mut ac = a.chunks_exact(LANES);
    let mut bc = b.chunks_exact(LANES);
    for (av, bv) in ac.by_ref().zip(bc.by_ref()) {
        for l in 0..LANES {
            lanes[l] += av[l] * bv[l];
        }
    }
    let mut acc = T::zero();
    for (av, bv) in ac.remainder().iter().zip(bc.remainder()) {
        acc += *av * *bv;
    }
    for v in lanes {
        acc += v;
    }
    acc
}

/// Weight gradient companion: per-tap dot products of output gradient rows
/// against shifted input rows.
#[allow(clippy::too_many_arguments)]
fn conv_direct_bwd_weight<T: Scalar>(
    x_group: &[T],
    g_group: &[T],
    d: &ConvDims,
    p: usize,
    cg_in: usize,
    cg_out: usize,
    dw_group: &mut [T],
) {
    for co in 0..cg_out {
        for ci in 0..cg_in {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let (lo, hi) = span1(d, p, kx);
                    if hi <= lo {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in p.saturating_sub(ky)..(d.h + p).saturating_sub(ky).min(d.oh) {
                        let iy = oy + ky - p;
                        let xs = &x_group[ci * d.h * d.w + iy * d.w + lo + kx - p..][..hi - lo];
                        let gs = &g_group[co * d.oh * d.ow + oy * d.ow + lo..][..hi - lo];
                        acc += dot_lanes(xs, gs);
                    }
                    dw_group[((co * cg_in + ci) * d.kh + ky) * d.kw + kx] += acc;
                }
            }
        }
    }
}

fn is_pointwise(d: &ConvDims, spec: ConvSpec) -> bool {
    d.kh == 1 && d.kw == 1 && spec.stride == 1 && spec.padding == 0
}

/// Narrow-output stride-1 groups take the shifted-plane kernel.
fn is_direct(spec: ConvSpec, cg_out: usize) -> bool {
    spec.stride == 1 && cg_out <= 2
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let d = conv_dims(x, weight, bias, spec)?;
    let cg_in = d.c_in / spec.groups;
    let cg_out = d.c_out / spec.groups;
    let kdim = cg_in * d.kh * d.kw;
    let m = d.oh * d.ow;
    let mut out = Tensor::zeros(vec![d.n, d.c_out, d.oh, d.ow]);
    let pointwise = is_pointwise(&d, spec);
    let direct = is_direct(spec, cg_out);
    let mut col = if pointwise || direct { Vec::new() } else { vec![T::zero(); kdim * m] };
    for ni in 0..d.n {
        for g in 0..spec.groups {
            let x_group = &x.data()[(ni * d.c_in + g * cg_in) * d.h * d.w..][..cg_in * d.h * d.w];
            let w_group = &weight.data()[g * cg_out * kdim..][..cg_out * kdim];
            let out_group =
                &mut out.data_mut()[(ni * d.c_out + g * cg_out) * m..][..cg_out * m];
            if direct {
                conv_direct_fwd(x_group, w_group, &d, spec.padding, cg_in, cg_out, out_group);
                continue;
            }
            let b_mat: &[T] = if pointwise {
                x_group
            } else {
                im2col(x_group, &d, spec, &mut col);
                &col
            };
            unsafe {
                T::gemm(
                    cg_out,
                    kdim,
                    m,
                    T::one(),
                    w_group.as_ptr(),
                    kdim as isize,
                    1,
                    b_mat.as_ptr(),
                    m as isize,
                    1,
                    T::zero(),
                    out_group.as_mut_ptr(),
                    m as isize,
                    1,
                );
            }
        }
    }
    if let Some(b) = bias {
        let out_data = out.data_mut();
        for ni in 0..d.n {
            for co in 0..d.c_out {
                let bv = b.data()[co];
                for v in &mut out_data[(ni * d.c_out + co) * m..][..m] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Accumulate gradients for input, weight, and bias. Any of the output slots
/// may be `None` when that operand does not require a gradient. The column
/// matrix is recomputed from the saved input rather than kept from forward.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
    g_out: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) -> Result<()> {
    let d = conv_dims(x, weight, None, spec)?;
    let cg_in = d.c_in / spec.groups;
    let cg_out = d.c_out / spec.groups;
    let kdim = cg_in * d.kh * d.kw;
    let m = d.oh * d.ow;
    let pointwise = is_pointwise(&d, spec);
    let direct = is_direct(spec, cg_out);
    let skip_col = pointwise || direct;
    let mut col = if skip_col { Vec::new() } else { vec![T::zero(); kdim * m] };
    let mut dcol = if skip_col || dx.is_none() { Vec::new() } else { vec![T::zero(); kdim * m] };
    for ni in 0..d.n {
        for g in 0..spec.groups {
            let g_group = &g_out[(ni * d.c_out + g * cg_out) * m..][..cg_out * m];
            if dw.is_some() || dx.is_some() {
                let x_group =
                    &x.data()[(ni * d.c_in + g * cg_in) * d.h * d.w..][..cg_in * d.h * d.w];
                if let Some(dw) = dw.as_deref_mut() {
                    let dw_group = &mut dw[g * cg_out * kdim..][..cg_out * kdim];
                    if direct {
                        conv_direct_bwd_weight(
                            x_group,
                            g_group,
                            &d,
                            spec.padding,
                            cg_in,
                            cg_out,
                            dw_group,
                        );
                    } else {
                        let b_mat: &[T] = if pointwise {
                            x_group
                        } else {
                            im2col(x_group, &d, spec, &mut col);
                            &col
                        };
                        // dW_g += G · colᵀ, accumulated across batch items.
                        unsafe {
                            T::gemm(
                                cg_out,
                                m,
                                kdim,
                                T::one(),
                                g_group.as_ptr(),
                                m as isize,
                                1,
                                b_mat.as_ptr(),
                                1,
                                m as isize,
                                T::one(),
                                dw_group.as_mut_ptr(),
                                kdim as isize,
                                1,
                            );
                        }
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let w_group = &weight.data()[g * cg_out * kdim..][..cg_out * kdim];
                    let dx_group =
                        &mut dx[(ni * d.c_in + g * cg_in) * d.h * d.w..][..cg_in * d.h * d.w];
                    if direct {
                        conv_direct_bwd_input(
                            g_group,
                            w_group,
                            &d,
                            spec.padding,
                            cg_in,
                            cg_out,
                            dx_group,
                        );
                    } else if pointwise {
                        // dcol is the input block itself; add straight in.
                        unsafe {
                            T::gemm(
                                kdim,
                                cg_out,
                                m,
                                T::one(),
                                w_group.as_ptr(),
                                1,
                                kdim as isize,
                                g_group.as_ptr(),
                                m as isize,
                                1,
                                T::one(),
                                dx_group.as_mut_ptr(),
                                m as isize,
                                1,
                            );
                        }
                    } else {
                        unsafe {
                            T::gemm(
                                kdim,
                                cg_out,
                                m,
                                T::one(),
                                w_group.as_ptr(),
                                1,
                                kdim as isize,
                                g_group.as_ptr(),
                                m as isize,
                                1,
                                T::zero(),
                                dcol.as_mut_ptr(),
                                m as isize,
                                1,
                            );
                        }
                        col2im_add(&dcol, &d, spec, dx_group);
                    }
                }
            }
            if let Some(db) = db.as_deref_mut() {
                for co in 0..cg_out {
                    let mut acc = T::zero();
                    for &v in &g_group[co * m..(co + 1) * m] {
                        acc += v;
                    }
                    db[g * cg_out + co] += acc;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop cross-correlation, the oracle the GEMM path must match.
    fn conv_naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        spec: ConvSpec,
    ) -> Tensor<f64> {
        let d = conv_dims(x, w, b, spec).unwrap();
        let cg_in = d.c_in / spec.groups;
        let cg_out = d.c_out / spec.groups;
        let mut out = Tensor::zeros(vec![d.n, d.c_out, d.oh, d.ow]);
        for ni in 0..d.n {
            for co in 0..d.c_out {
                let g = co / cg_out;
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[co]);
                        for ci in 0..cg_in {
                            for ky in 0..d.kh {
                                for kx in 0..d.kw {
                                    let iy = (oy * spec.stride + ky) as isize
                                        - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx) as isize
                                        - spec.padding as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= d.h as isize
                                        || ix >= d.w as isize
                                    {
                                        continue;
                                    }
                                    acc += x.at(&[ni, g * cg_in + ci, iy as usize, ix as usize])
                                        * w.at(&[co, ci, ky, kx]);
                                }
                            }
                        }
                        *out_mut(&mut out, &[ni, co, oy, ox]) = acc;
                    }
                }
            }
        }
        out
    }

    fn out_mut<'a>(t: &'a mut Tensor<f64>, idx: &[usize]) -> &'a mut f64 {
        let strides = crate::tensor::row_major_strides(t.shape());
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        &mut t.data_mut()[off]
    }

    fn filled(shape: Vec<usize>, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn gemm_path_matches_naive_conv() {
        let cases = [
            (1, 1, ConvSpec { stride: 1, padding: 1, groups: 1 }, 3, (5, 7)),
            (2, 3, ConvSpec { stride: 1, padding: 1, groups: 1 }, 3, (8, 8)),
            (1, 4, ConvSpec { stride: 2, padding: 1, groups: 1 }, 3, (9, 6)),
            (2, 4, ConvSpec { stride: 1, padding: 0, groups: 1 }, 1, (6, 6)),
            (1, 4, ConvSpec { stride: 1, padding: 2, groups: 2 }, 5, (7, 7)),
            (1, 6, ConvSpec { stride: 3, padding: 0, groups: 3 }, 2, (8, 8)),
        ];
        for (n, c_in, spec, k, (h, w)) in cases {
            let c_out = if spec.groups == 3 { 6 } else { 4 };
            let x = filled(vec![n, c_in, h, w], |i| ((i * 37 + 11) % 101) as f64 * 0.07 - 3.0);
            let wt = filled(vec![c_out, c_in / spec.groups, k, k], |i| {
                ((i * 53 + 7) % 61) as f64 * 0.05 - 1.4
            });
            let b = filled(vec![c_out], |i| i as f64 * 0.3 - 0.6);
            let fast = conv2d_forward(&x, &wt, Some(&b), spec).unwrap();
            let slow = conv_naive(&x, &wt, Some(&b), spec);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b} for spec {spec:?}");
            }
        }
    }

    #[test]
    fn direct_path_matches_naive_conv() {
        // (n, c_in, c_out, groups, k, pad, h, w) all with stride 1 and
        // cg_out <= 2 so the shifted-plane kernel runs.
        let cases = [
            (1, 5, 1, 1, 3, 1, 6, 7),
            (2, 4, 2, 1, 5, 2, 8, 5),
            (1, 6, 6, 6, 3, 1, 7, 7), // depthwise
            (2, 3, 1, 1, 1, 0, 4, 9),
            (1, 2, 2, 1, 7, 3, 7, 3), // kernel wider than the input
        ];
        for (n, c_in, c_out, groups, k, pad, h, w) in cases {
            let spec = ConvSpec { stride: 1, padding: pad, groups };
            let x = filled(vec![n, c_in, h, w], |i| ((i * 29 + 5) % 89) as f64 * 0.06 - 2.1);
            let wt = filled(vec![c_out, c_in / groups, k, k], |i| {
                ((i * 41 + 3) % 47) as f64 * 0.09 - 1.9
            });
            let b = filled(vec![c_out], |i| i as f64 * 0.2 - 0.1);
            let fast = conv2d_forward(&x, &wt, Some(&b), spec).unwrap();
            let slow = conv_naive(&x, &wt, Some(&b), spec);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b} for case {spec:?} k{k}");
            }
        }
    }

    #[test]
    fn rejects_group_mismatch() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![4, 3, 3, 3]);
        let spec = ConvSpec { stride: 1, padding: 1, groups: 2 };
        assert!(conv2d_forward(&x, &w, None, spec).is_err());
    }

    #[test]
    fn rejects_oversize_kernel() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros(vec![1, 1, 5, 5]);
        assert!(conv2d_forward(&x, &w, None, ConvSpec::unit()).is_err());
    }
}
