//! Shape-aware elementwise and reduction kernels shared by the tape ops.
//!
//! Broadcasting is restricted to the pattern the networks need: `b` must have
//! the same rank as `a` and every extent either equal or 1 (e.g. N×C×1×1 or
//! N×1×H×W against N×C×H×W). All traversals run in a fixed row-major order so
//! results are bit-stable.

use crate::error::{Error, Result};

use super::Scalar;

/// Row-major strides for `b` when broadcast against `a`; 0 on singleton axes.
fn broadcast_strides(a_shape: &[usize], b_shape: &[usize]) -> Vec<usize> {
    let real = super::row_major_strides(b_shape);
    a_shape
        .iter()
        .zip(b_shape)
        .zip(real)
        .map(|((&ad, &bd), s)| if bd == 1 && ad != 1 { 0 } else { s })
        .collect()
}

pub fn check_broadcast(a_shape: &[usize], b_shape: &[usize]) -> Result<()> {
    let compatible = a_shape.len() == b_shape.len()
        && a_shape
            .iter()
            .zip(b_shape)
            .all(|(&ad, &bd)| ad == bd || bd == 1);
    if compatible {
        Ok(())
    } else {
        Err(Error::Dim(format!(
            "shape {b_shape:?} is not broadcastable over {a_shape:?}"
        )))
    }
}

/// Walk `a`'s index space, handing each (outer-run, b-offset) pair to `f`.
/// The last axis is the run; `b_last_stride` is 0 when b is constant over it.
fn for_each_run(a_shape: &[usize], b_shape: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let bs = broadcast_strides(a_shape, b_shape);
    let last = a_shape.len() - 1;
    let inner = a_shape[last];
    let outer: usize = a_shape[..last].iter().product();
    for oi in 0..outer {
        let mut rem = oi;
        let mut b_base = 0usize;
        for d in (0..last).rev() {
            let id = rem % a_shape[d];
            rem /= a_shape[d];
            b_base += id * bs[d];
        }
        f(oi * inner, b_base, bs[last]);
    }
}

pub fn binary_map<T: Scalar>(
    a_shape: &[usize],
    a: &[T],
    b_shape: &[usize],
    b: &[T],
    out: &mut [T],
    f: impl Fn(T, T) -> T,
) {
    if a_shape == b_shape {
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = f(x, y);
        }
        return;
    }
    let inner = *a_shape.last().unwrap();
    for_each_run(a_shape, b_shape, |a_base, b_base, b_stride| {
        let ar = &a[a_base..a_base + inner];
        let or = &mut out[a_base..a_base + inner];
        if b_stride == 0 {
            let bv = b[b_base];
            for (o, &x) in or.iter_mut().zip(ar) {
                *o = f(x, bv);
            }
        } else {
            let br = &b[b_base..b_base + inner];
            for ((o, &x), &y) in or.iter_mut().zip(ar).zip(br) {
                *o = f(x, y);
            }
        }
    });
}

/// Accumulate `da[i] += g[i]*dfa(a,b)` and `db[j] += g[i]*dfb(a,b)` over the
/// broadcast index map. Either side may be absent.
pub fn binary_backward<T: Scalar>(
    a_shape: &[usize],
    a: &[T],
    b_shape: &[usize],
    b: &[T],
    g: &[T],
    mut da: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
    dfa: impl Fn(T, T) -> T,
    dfb: impl Fn(T, T) -> T,
) {
    if a_shape == b_shape {
        if let Some(da) = da.as_deref_mut() {
            for i in 0..g.len() {
                da[i] += g[i] * dfa(a[i], b[i]);
            }
        }
        if let Some(db) = db.as_deref_mut() {
            for i in 0..g.len() {
                db[i] += g[i] * dfb(a[i], b[i]);
            }
        }
        return;
    }
    let inner = *a_shape.last().unwrap();
    for_each_run(a_shape, b_shape, |a_base, b_base, b_stride| {
        for i in 0..inner {
            let ai = a_base + i;
            let bi = b_base + i * b_stride;
            if let Some(da) = da.as_deref_mut() {
                da[ai] += g[ai] * dfa(a[ai], b[bi]);
            }
            if let Some(db) = db.as_deref_mut() {
                db[bi] += g[ai] * dfb(a[ai], b[bi]);
            }
        }
    });
}

pub fn unary_map<T: Scalar>(a: &[T], out: &mut [T], f: impl Fn(T) -> T) {
    for (o, &x) in out.iter_mut().zip(a) {
        *o = f(x);
    }
}

/// dx[i] += g[i] * df(x[i], y[i]) where y is the op's forward output.
pub fn unary_backward<T: Scalar>(x: &[T], y: &[T], g: &[T], dx: &mut [T], df: impl Fn(T, T) -> T) {
    for i in 0..g.len() {
        dx[i] += g[i] * df(x[i], y[i]);
    }
}

/// Materialize `src` (same rank, singleton axes) into `dst` of `dst_shape`.
pub fn broadcast_forward<T: Scalar>(
    dst_shape: &[usize],
    src_shape: &[usize],
    src: &[T],
    dst: &mut [T],
) {
    let inner = *dst_shape.last().unwrap();
    for_each_run(dst_shape, src_shape, |d_base, s_base, s_stride| {
        let dr = &mut dst[d_base..d_base + inner];
        if s_stride == 0 {
            dr.fill(src[s_base]);
        } else {
            dr.copy_from_slice(&src[s_base..s_base + inner]);
        }
    });
}

/// dsrc[j] += g[i] summed over the axes `src` is broadcast along.
pub fn broadcast_backward<T: Scalar>(
    dst_shape: &[usize],
    src_shape: &[usize],
    g: &[T],
    dsrc: &mut [T],
) {
    let inner = *dst_shape.last().unwrap();
    for_each_run(dst_shape, src_shape, |d_base, s_base, s_stride| {
        if s_stride == 0 {
            let mut acc = T::zero();
            for &v in &g[d_base..d_base + inner] {
                acc += v;
            }
            dsrc[s_base] += acc;
        } else {
            for i in 0..inner {
                dsrc[s_base + i] += g[d_base + i];
            }
        }
    });
}

/// Per-channel spatial mean: N×C×H×W -> N×C×1×1.
pub fn global_avg_pool_forward<T: Scalar>(n: usize, c: usize, h: usize, w: usize, x: &[T], out: &mut [T]) {
    let hw = h * w;
    let inv = T::one() / T::from_f64(hw as f64);
    for nc in 0..n * c {
        let mut acc = T::zero();
        for &v in &x[nc * hw..(nc + 1) * hw] {
            acc += v;
        }
        out[nc] = acc * inv;
    }
}

pub fn global_avg_pool_backward<T: Scalar>(n: usize, c: usize, h: usize, w: usize, g: &[T], dx: &mut [T]) {
    let hw = h * w;
    let inv = T::one() / T::from_f64(hw as f64);
    for nc in 0..n * c {
        let gv = g[nc] * inv;
        for d in &mut dx[nc * hw..(nc + 1) * hw] {
            *d += gv;
        }
    }
}

/// Mean across channels, keepdim: N×C×H×W -> N×1×H×W. Sums in channel order
/// then divides once, so it matches a straightforward per-pixel loop exactly.
pub fn channel_mean_forward<T: Scalar>(n: usize, c: usize, h: usize, w: usize, x: &[T], out: &mut [T]) {
    let hw = h * w;
    let channels = T::from_f64(c as f64);
    for ni in 0..n {
        for p in 0..hw {
            let mut acc = T::zero();
            for ci in 0..c {
                acc += x[(ni * c + ci) * hw + p];
            }
            out[ni * hw + p] = acc / channels;
        }
    }
}

pub fn channel_mean_backward<T: Scalar>(n: usize, c: usize, h: usize, w: usize, g: &[T], dx: &mut [T]) {
    let hw = h * w;
    let inv = T::one() / T::from_f64(c as f64);
    for ni in 0..n {
        for ci in 0..c {
            for p in 0..hw {
                dx[(ni * c + ci) * hw + p] += g[ni * hw + p] * inv;
            }
        }
    }
}

pub fn sum_all<T: Scalar>(x: &[T]) -> T {
    let mut acc = T::zero();
    for &v in x {
        acc += v;
    }
    acc
}

/// Copy channel blocks of each input, in order, per batch item.
pub fn concat_channels_forward<T: Scalar>(
    n: usize,
    hw: usize,
    parts: &[(usize, &[T])], // (channels, data) per input
    out: &mut [T],
) {
    let c_total: usize = parts.iter().map(|(c, _)| c).sum();
    for ni in 0..n {
        let mut c_off = 0;
        for &(c, data) in parts {
            let src = &data[ni * c * hw..(ni + 1) * c * hw];
            let dst_base = ni * c_total * hw + c_off * hw;
            out[dst_base..dst_base + c * hw].copy_from_slice(src);
            c_off += c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rejects_rank_mismatch() {
        assert!(check_broadcast(&[2, 3, 4, 4], &[3, 1, 1]).is_err());
        assert!(check_broadcast(&[2, 3, 4, 4], &[2, 3, 1, 1]).is_ok());
        assert!(check_broadcast(&[2, 3, 4, 4], &[2, 1, 4, 4]).is_ok());
        assert!(check_broadcast(&[2, 3, 4, 4], &[2, 2, 1, 1]).is_err());
    }

    #[test]
    fn binary_map_matches_per_channel_loop() {
        // N×C×1×1 bias broadcast over N×C×H×W, against an explicit loop.
        let (n, c, h, w) = (2, 3, 4, 5);
        let a: Vec<f64> = (0..n * c * h * w).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..n * c).map(|i| 100.0 + i as f64).collect();
        let mut out = vec![0.0; a.len()];
        binary_map(&[n, c, h, w], &a, &[n, c, 1, 1], &b, &mut out, |x, y| x + y);
        for ni in 0..n {
            for ci in 0..c {
                for p in 0..h * w {
                    let i = (ni * c + ci) * h * w + p;
                    assert_eq!(out[i], a[i] + b[ni * c + ci]);
                }
            }
        }
    }

    #[test]
    fn broadcast_roundtrip_sums_gradient() {
        let src = [1.0f64, 2.0];
        let mut dst = vec![0.0; 8];
        broadcast_forward(&[1, 2, 2, 2], &[1, 2, 1, 1], &src, &mut dst);
        assert_eq!(dst, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let g = vec![1.0f64; 8];
        let mut dsrc = vec![0.0; 2];
        broadcast_backward(&[1, 2, 2, 2], &[1, 2, 1, 1], &g, &mut dsrc);
        assert_eq!(dsrc, vec![4.0, 4.0]);
    }

    #[test]
    fn channel_mean_is_exact_sum_then_divide() {
        let x = [0.2f64, 0.4, 0.6];
        let mut out = [0.0f64];
        channel_mean_forward(1, 3, 1, 1, &x, &mut out);
        assert_eq!(out[0], (0.2 + 0.4 + 0.6) / 3.0);
    }
}
