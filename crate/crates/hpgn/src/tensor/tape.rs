//! Reverse-mode autodiff on a linear tape.
//!
//! Every operation appends one node holding its eagerly computed value and
//! the indices of its inputs. `backward` walks the nodes once in reverse,
//! accumulating gradients into per-node buffers; a tape can be replayed
//! backward exactly once and reports a stale-tape error afterwards.
//!
//! Binary broadcasting is one-sided: the right operand may have singleton
//! axes against the left, never the reverse.

use crate::error::{Error, Result};

use super::conv::{self, ConvSpec};
use super::kernels;
use super::resample;
use super::{Scalar, Tensor};

/// Handle to a tape node. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var, T),
    MulScalar(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Clamp(Var, T, T),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    Down2(Var),
    Up2(Var),
    GlobalAvgPool(Var),
    ChannelMean(Var),
    MeanAll(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    BroadcastTo(Var),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor; its `requires_grad` flag decides whether
    /// gradients flow into it.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Record an input that never receives gradients.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    /// Gradient accumulated for `v`, present only after `backward` and only
    /// for nodes on a differentiable path to the loss.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn node(&self, v: Var) -> &Node<T> {
        self.nodes.get(v.0).unwrap_or_else(|| panic!("variable {} not on this tape", v.0))
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "variable {} does not belong to this tape (len {})",
                v.0,
                self.nodes.len()
            )))
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, a: Var, b: Var, op_of: impl Fn(Var, Var) -> Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        kernels::check_broadcast(av.shape(), bv.shape())?;
        let mut out = Tensor::zeros(av.shape().to_vec());
        kernels::binary_map(av.shape(), av.data(), bv.shape(), bv.data(), out.data_mut(), f);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out, op_of(a, b), rg))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        self.check(a)?;
        let av = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(av.shape().to_vec());
        kernels::unary_map(av.data(), out.data_mut(), f);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div, |x, y| x / y)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        self.unary(a, Op::AddScalar(a, s), |x| x + s)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        self.unary(a, Op::MulScalar(a, s), |x| x * s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    /// ln(1 + eˣ), evaluated in the overflow-free split form.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), |x| {
            if x > T::zero() {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            }
        })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        self.unary(a, Op::LeakyRelu(a, s), |x| if x > T::zero() { x } else { x * s })
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let out = conv::conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|b| &self.nodes[b.0].value),
            spec,
        )?;
        let rg = self.nodes[x.0].requires_grad
            || self.nodes[w.0].requires_grad
            || b.is_some_and(|b| self.nodes[b.0].requires_grad);
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, rg))
    }

    pub fn down2(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = resample::down2_forward(&self.nodes[a.0].value)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::Down2(a), rg))
    }

    pub fn up2(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = resample::up2_forward(&self.nodes[a.0].value)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::Up2(a), rg))
    }

    /// N×C×H×W -> N×C×1×1 spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (n, c, h, w) = self.nodes[a.0].value.dims4()?;
        let mut out = Tensor::zeros(vec![n, c, 1, 1]);
        kernels::global_avg_pool_forward(n, c, h, w, self.nodes[a.0].value.data(), out.data_mut());
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::GlobalAvgPool(a), rg))
    }

    /// N×C×H×W -> N×1×H×W mean over channels.
    pub fn channel_mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (n, c, h, w) = self.nodes[a.0].value.dims4()?;
        let mut out = Tensor::zeros(vec![n, 1, h, w]);
        kernels::channel_mean_forward(n, c, h, w, self.nodes[a.0].value.data(), out.data_mut());
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::ChannelMean(a), rg))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let av = &self.nodes[a.0].value;
        let mean = kernels::sum_all(av.data()) / T::from_f64(av.numel() as f64);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Tensor::scalar(mean), Op::MeanAll(a), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let sum = kernels::sum_all(self.nodes[a.0].value.data());
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Tensor::scalar(sum), Op::SumAll(a), rg))
    }

    /// Concatenate rank-4 inputs along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dim("concat needs at least one input".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let (n, _, h, w) = self.nodes[parts[0].0].value.dims4()?;
        let mut c_total = 0;
        let mut raw = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.nodes[p.0].value.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Dim(format!(
                    "concat input {:?} does not match leading shape {}x_x{}x{}",
                    self.nodes[p.0].value.shape(),
                    n,
                    h,
                    w
                )));
            }
            c_total += pc;
            raw.push((pc, self.nodes[p.0].value.data()));
        }
        let mut out = Tensor::zeros(vec![n, c_total, h, w]);
        kernels::concat_channels_forward(n, h * w, &raw, out.data_mut());
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Materialize `a` (same rank, singleton axes allowed) at `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let av = &self.nodes[a.0].value;
        kernels::check_broadcast(shape, av.shape())?;
        let mut out = Tensor::zeros(shape.to_vec());
        kernels::broadcast_forward(shape, av.shape(), av.data(), out.data_mut());
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::BroadcastTo(a), rg))
    }

    /// Accumulate d(loss)/d(node) for every node feeding `loss`. Consumes the
    /// tape's backward capacity; a second call reports a stale tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.consumed {
            return Err(Error::StaleTape);
        }
        self.consumed = true;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward starts from a single value, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Contract(
                "backward from a value with no differentiable inputs".into(),
            ));
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let one = T::one();
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    binary_bwd(nodes, grads, *a, *b, &g, |_, _| one, |_, _| one);
                }
                Op::Sub(a, b) => {
                    binary_bwd(nodes, grads, *a, *b, &g, |_, _| one, |_, _| -one);
                }
                Op::Mul(a, b) => {
                    binary_bwd(nodes, grads, *a, *b, &g, |_, bv| bv, |av, _| av);
                }
                Op::Div(a, b) => {
                    binary_bwd(nodes, grads, *a, *b, &g, |_, bv| one / bv, |av, bv| -av / (bv * bv));
                }
                Op::AddScalar(a, _) => unary_bwd(nodes, grads, *a, i, &g, |_, _| one),
                Op::MulScalar(a, s) => {
                    let s = *s;
                    unary_bwd(nodes, grads, *a, i, &g, move |_, _| s)
                }
                Op::Sigmoid(a) => unary_bwd(nodes, grads, *a, i, &g, |_, y| y * (one - y)),
                Op::Tanh(a) => unary_bwd(nodes, grads, *a, i, &g, |_, y| one - y * y),
                Op::Softplus(a) => {
                    unary_bwd(nodes, grads, *a, i, &g, |x, _| one / (one + (-x).exp()))
                }
                Op::Exp(a) => unary_bwd(nodes, grads, *a, i, &g, |_, y| y),
                Op::Abs(a) => unary_bwd(nodes, grads, *a, i, &g, |x, _| {
                    if x > T::zero() {
                        one
                    } else if x < T::zero() {
                        -one
                    } else {
                        T::zero()
                    }
                }),
                Op::Relu(a) => {
                    unary_bwd(nodes, grads, *a, i, &g, |x, _| if x > T::zero() { one } else { T::zero() })
                }
                Op::LeakyRelu(a, s) => {
                    let s = *s;
                    unary_bwd(nodes, grads, *a, i, &g, move |x, _| if x > T::zero() { one } else { s })
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    unary_bwd(nodes, grads, *a, i, &g, move |x, _| {
                        if x >= lo && x <= hi {
                            one
                        } else {
                            T::zero()
                        }
                    })
                }
                Op::Conv2d { x, w, b, spec } => {
                    let (x, w, b, spec) = (*x, *w, *b, *spec);
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    // One pass per operand keeps the gradient buffers
                    // disjoint even if two operands alias the same node.
                    if nodes[x.0].requires_grad {
                        let dx = slot(nodes, grads, x);
                        conv::conv2d_backward(xv, wv, spec, &g, Some(dx), None, None)?;
                    }
                    if nodes[w.0].requires_grad {
                        let dw = slot(nodes, grads, w);
                        conv::conv2d_backward(xv, wv, spec, &g, None, Some(dw), None)?;
                    }
                    if let Some(b) = b {
                        if nodes[b.0].requires_grad {
                            let db = slot(nodes, grads, b);
                            conv::conv2d_backward(xv, wv, spec, &g, None, None, Some(db))?;
                        }
                    }
                }
                Op::Down2(a) => {
                    let a = *a;
                    if nodes[a.0].requires_grad {
                        let (n, c, h, w) = nodes[a.0].value.dims4()?;
                        resample::down2_backward(n, c, h, w, &g, slot(nodes, grads, a));
                    }
                }
                Op::Up2(a) => {
                    let a = *a;
                    if nodes[a.0].requires_grad {
                        let (n, c, h, w) = nodes[a.0].value.dims4()?;
                        resample::up2_backward(n, c, h, w, &g, slot(nodes, grads, a));
                    }
                }
                Op::GlobalAvgPool(a) => {
                    let a = *a;
                    if nodes[a.0].requires_grad {
                        let (n, c, h, w) = nodes[a.0].value.dims4()?;
                        kernels::global_avg_pool_backward(n, c, h, w, &g, slot(nodes, grads, a));
                    }
                }
                Op::ChannelMean(a) => {
                    let a = *a;
                    if nodes[a.0].requires_grad {
                        let (n, c, h, w) = nodes[a.0].value.dims4()?;
                        kernels::channel_mean_backward(n, c, h, w, &g, slot(nodes, grads, a));
                    }
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    if nodes[a.0].requires_grad {
                        let inv = one / T::from_f64(nodes[a.0].value.numel() as f64);
                        let gv = g[0] * inv;
                        for d in slot(nodes, grads, a) {
                            *d += gv;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let a = *a;
                    if nodes[a.0].requires_grad {
                        let gv = g[0];
                        for d in slot(nodes, grads, a) {
                            *d += gv;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let (n, c_total, h, w) = nodes[i].value.dims4()?;
                    let hw = h * w;
                    let mut c_off = 0;
                    for p in parts {
                        let pc = nodes[p.0].value.shape()[1];
                        if nodes[p.0].requires_grad {
                            let dp = slot(nodes, grads, p);
                            for ni in 0..n {
                                let src = &g[(ni * c_total + c_off) * hw..][..pc * hw];
                                let dst = &mut dp[ni * pc * hw..(ni + 1) * pc * hw];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        c_off += pc;
                    }
                }
                Op::BroadcastTo(a) => {
                    let a = *a;
                    if nodes[a.0].requires_grad {
                        let dst_shape = nodes[i].value.shape().to_vec();
                        let src_shape = nodes[a.0].value.shape().to_vec();
                        kernels::broadcast_backward(&dst_shape, &src_shape, &g, slot(nodes, grads, a));
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Zero-initialized gradient buffer for `v`, created on first touch.
fn slot<'g, T: Scalar>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()])
}

fn unary_bwd<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    out: usize,
    g: &[T],
    df: impl Fn(T, T) -> T,
) {
    if !nodes[a.0].requires_grad {
        return;
    }
    let x = nodes[a.0].value.data();
    let y = nodes[out].value.data();
    kernels::unary_backward(x, y, g, slot(nodes, grads, a), df);
}

#[allow(clippy::too_many_arguments)]
fn binary_bwd<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    b: Var,
    g: &[T],
    dfa: impl Fn(T, T) -> T,
    dfb: impl Fn(T, T) -> T,
) {
    let (a_shape, a_data) = (nodes[a.0].value.shape(), nodes[a.0].value.data());
    let (b_shape, b_data) = (nodes[b.0].value.shape(), nodes[b.0].value.data());
    // Two passes so `a == b` (e.g. mul(x, x)) never aliases two mutable
    // borrows of one buffer.
    if nodes[a.0].requires_grad {
        let da = slot(nodes, grads, a);
        kernels::binary_backward(a_shape, a_data, b_shape, b_data, g, Some(da), None, &dfa, &dfb);
    }
    if nodes[b.0].requires_grad {
        let db = slot(nodes, grads, b);
        kernels::binary_backward(a_shape, a_data, b_shape, b_data, g, None, Some(db), &dfa, &dfb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_through_product() {
        // d/dx mean(x * x) at x = [1, 2, 3] is 2x/3.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad());
        let y = tape.mul(x, x).unwrap();
        let loss = tape.mean_all(y).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g, &[2.0 / 3.0, 4.0 / 3.0, 6.0 / 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0).with_grad());
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[5.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn second_backward_reports_stale_tape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(1.0).with_grad());
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        match tape.backward(y) {
            Err(Error::StaleTape) => {}
            other => panic!("expected stale tape, got {other:?}"),
        }
    }

    #[test]
    fn backward_needs_single_value() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
        let y = tape.mul(x, x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_gradient_sums_over_expanded_axes() {
        // y = x4 * s where s is per-channel; ds = sum over the plane of x.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(vec![1, 2, 2, 2], 3.0));
        let s = tape.leaf(Tensor::new(vec![1, 2, 1, 1], vec![1.0, 2.0]).unwrap().with_grad());
        let y = tape.mul(x, s).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(s).unwrap(), &[12.0, 12.0]);
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let _pad = b.leaf(Tensor::scalar(1.0));
        // Same index exists on `b`, so only an out-of-range one can be caught.
        let y = a.mul(x, x).unwrap();
        assert!(matches!(b.check(y), Err(Error::Contract(_))));
    }

    #[test]
    fn concat_splits_gradient_by_channel() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(vec![1, 1, 2, 2], 1.0).with_grad());
        let b = tape.leaf(Tensor::full(vec![1, 2, 2, 2], 2.0).with_grad());
        let cat = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).shape(), &[1, 3, 2, 2]);
        let doubled = tape.mul_scalar(cat, 3.0).unwrap();
        let loss = tape.sum_all(doubled).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0; 4]);
        assert_eq!(tape.grad(b).unwrap(), &[3.0; 8]);
    }
}
