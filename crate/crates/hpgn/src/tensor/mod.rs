//! Dense-tensor engine with reverse-mode differentiation.
//!
//! Tensors are flat row-major buffers with an N-d shape (image data uses the
//! N×C×H×W convention). Differentiable computation runs on a [`Tape`]: every
//! primitive op appends a node holding its output value and enough metadata
//! to replay the chain rule in reverse. Training uses `f32`; gradient
//! verification instantiates the same code with `f64`.

use std::fmt::{Debug, Display};

use crate::error::{Error, Result};

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod resample;
pub mod tape;

pub use adam::Adam;
pub use conv::{conv2d_backward, conv2d_forward, ConvSpec};
pub use params::{Bound, ParamStore};
pub use tape::{Tape, Var};

/// Element type the engine is generic over: `f32` for training, `f64` for
/// verification builds.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Copy
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// C += alpha * A(m×k) * B(k×n) + beta * C, arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major tensor. The value of every tape node, and the storage for
/// model parameters between steps.
#[derive(Clone, Debug)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    /// Whether backward should deposit a gradient for this tensor.
    pub requires_grad: bool,
    /// Populated by backward; always the same length as `data`.
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    /// Shape-`[1]` tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self::full(vec![1], value)
    }

    pub fn from_f64s(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The four extents of an N×C×H×W tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Dim(format!("expected 4-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(Scalar::to_f64(v))).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Element by N-d index, for tests and small inspections.
    pub fn at(&self, index: &[usize]) -> T {
        let strides = row_major_strides(&self.shape);
        let off: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[off]
    }
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Reflection-pad the bottom/right spatial borders of an N×C×H×W tensor.
/// The reflection excludes the edge pixel (pad 2 of `[a b c]` gives `[a b c b a]`),
/// so `pad < extent` is required.
pub fn pad_reflect_hw<T: Scalar>(t: &Tensor<T>, pad_h: usize, pad_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    if pad_h >= h || pad_w >= w {
        return Err(Error::Dim(format!(
            "reflection pad ({pad_h},{pad_w}) must be smaller than extent ({h},{w})"
        )));
    }
    let (oh, ow) = (h + pad_h, w + pad_w);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let src = t.data();
    let dst = out.data_mut();
    for nc in 0..n * c {
        let sbase = nc * h * w;
        let dbase = nc * oh * ow;
        for oy in 0..oh {
            let iy = if oy < h { oy } else { 2 * h - 2 - oy };
            for ox in 0..ow {
                let ix = if ox < w { ox } else { 2 * w - 2 - ox };
                dst[dbase + oy * ow + ox] = src[sbase + iy * w + ix];
            }
        }
    }
    Ok(out)
}

/// Crop an N×C×H×W tensor to its top-left `h`×`w` region.
pub fn crop_hw<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c, th, tw) = t.dims4()?;
    if h > th || w > tw {
        return Err(Error::Dim(format!(
            "crop {h}x{w} exceeds tensor extent {th}x{tw}"
        )));
    }
    let mut out = Tensor::zeros(vec![n, c, h, w]);
    let src = t.data();
    let dst = out.data_mut();
    for nc in 0..n * c {
        for y in 0..h {
            let s = nc * th * tw + y * tw;
            let d = nc * h * w + y * w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(row_major_strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(row_major_strides(&[5]), vec![1]);
    }

    #[test]
    fn pad_reflect_excludes_edge() {
        // [1 2 3] padded by 2 on the right -> [1 2 3 2 1]
        let t = Tensor::<f64>::new(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = pad_reflect_hw(&t, 0, 2).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 2.0, 1.0]);
        let back = crop_hw(&p, 1, 3).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn pad_reflect_rejects_oversize() {
        let t = Tensor::<f64>::zeros(vec![1, 1, 2, 2]);
        assert!(pad_reflect_hw(&t, 2, 0).is_err());
    }
}
