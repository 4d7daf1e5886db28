//! Hybrid information filter: condition illumination features on the
//! compression priors.
//!
//! The QF branch turns the normalized quality factor into per-channel affine
//! coefficients (scale parameterized as 1 + tanh(raw), so zero raw mappings
//! leave the features untouched). The QM branch embeds the quantization
//! table, tiles it, and derives a single-channel sigmoid attention map from
//! the concatenation with the features. Fusion is the elementwise sum of the
//! two branch outputs.
//!
//! With every branch parameter zero the composition is pinned: the QF branch
//! is exactly the identity and the QM branch contributes σ(0)·features, so
//! the fused output is exactly features + 0.5·features.

use rand::Rng;

use crate::error::{Error, Result};
use crate::jpeg::{QualityFactor, QuantizationMatrix};
use crate::net;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Bound, ParamStore, Scalar, Tensor};

const HIDDEN: usize = 64;

/// Which conditioning branches are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HifMode {
    /// Features pass through untouched (trunk-only baseline).
    Off,
    QfOnly,
    QmOnly,
    Full,
}

impl HifMode {
    pub fn uses_qf(self) -> bool {
        matches!(self, HifMode::QfOnly | HifMode::Full)
    }

    pub fn uses_qm(self) -> bool {
        matches!(self, HifMode::QmOnly | HifMode::Full)
    }
}

/// Per-channel affine coefficients derived from the quality factor.
pub struct QfCoefficients {
    /// N×C×1×1, equal to 1 + tanh(raw).
    pub scale: Var,
    /// N×C×1×1, raw.
    pub shift: Var,
}

/// Spatial attention derived from the quantization matrix, N×1×H×W in (0,1).
pub struct QmAttention {
    pub map: Var,
}

pub struct Hif {
    channels: usize,
    mode: HifMode,
    param_count: usize,
}

impl Hif {
    /// Register the parameters for the active branches under the `hif.`
    /// prefix. The parameter count depends only on the width and mode.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        channels: usize,
        mode: HifMode,
    ) -> Result<Self> {
        let before = store.numel_total();
        if mode.uses_qf() {
            store.register_conv2d(rng, "hif.qf.fc0", HIDDEN, 1, 1, 1, true)?;
            store.register_conv2d(rng, "hif.qf.fc1", HIDDEN, HIDDEN, 1, 1, true)?;
            store.register_conv2d(rng, "hif.qf.scale", channels, HIDDEN, 1, 1, true)?;
            store.register_conv2d(rng, "hif.qf.shift", channels, HIDDEN, 1, 1, true)?;
        }
        if mode.uses_qm() {
            store.register_conv2d(rng, "hif.qm.fc0", HIDDEN, 64, 1, 1, true)?;
            store.register_conv2d(rng, "hif.qm.fc1", HIDDEN, HIDDEN, 1, 1, true)?;
            store.register_conv2d(rng, "hif.qm.embed", channels, HIDDEN, 1, 1, true)?;
            store.register_conv2d(rng, "hif.qm.att", 1, 2 * channels, 3, 3, true)?;
        }
        Ok(Hif { channels, mode, param_count: store.numel_total() - before })
    }

    pub fn mode(&self) -> HifMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Normalized QF per batch item as an N×1×1×1 constant.
    fn qf_input<T: Scalar>(tape: &mut Tape<T>, qfs: &[QualityFactor]) -> Result<Var> {
        let vals: Vec<f64> = qfs.iter().map(|q| q.normalized()).collect();
        let t = Tensor::from_f64s(vec![qfs.len(), 1, 1, 1], &vals)?;
        Ok(tape.constant(t))
    }

    /// Normalized QM per batch item as an N×64×1×1 constant.
    fn qm_input<T: Scalar>(tape: &mut Tape<T>, qms: &[QuantizationMatrix]) -> Result<Var> {
        let mut vals = Vec::with_capacity(qms.len() * 64);
        for qm in qms {
            vals.extend_from_slice(&qm.feature_vector());
        }
        let t = Tensor::from_f64s(vec![qms.len(), 64, 1, 1], &vals)?;
        Ok(tape.constant(t))
    }

    fn check_batch(&self, tape: &Tape<impl Scalar>, f_illum: Var, len: usize) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = tape.value(f_illum).dims4()?;
        if c != self.channels {
            return Err(Error::Dim(format!(
                "features have {c} channels, filter is built for {}",
                self.channels
            )));
        }
        if n != len {
            return Err(Error::Dim(format!(
                "batch has {n} items but {len} priors were supplied"
            )));
        }
        Ok((n, h, w))
    }

    pub fn qf_coefficients<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        qfs: &[QualityFactor],
    ) -> Result<QfCoefficients> {
        let x = Self::qf_input(tape, qfs)?;
        let h = net::conv(tape, bound, "hif.qf.fc0", x, net::pointwise())?;
        let h = tape.leaky_relu(h, net::LEAKY_SLOPE)?;
        let h = net::conv(tape, bound, "hif.qf.fc1", h, net::pointwise())?;
        let h = tape.leaky_relu(h, net::LEAKY_SLOPE)?;
        let raw_scale = net::conv(tape, bound, "hif.qf.scale", h, net::pointwise())?;
        let t = tape.tanh(raw_scale)?;
        let scale = tape.add_scalar(t, 1.0)?;
        let shift = net::conv(tape, bound, "hif.qf.shift", h, net::pointwise())?;
        Ok(QfCoefficients { scale, shift })
    }

    /// F_fea1 = F_illum ⊗ scale + shift, channel-broadcast.
    pub fn qf_branch<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        f_illum: Var,
        qfs: &[QualityFactor],
    ) -> Result<Var> {
        self.check_batch(tape, f_illum, qfs.len())?;
        let coef = self.qf_coefficients(tape, bound, qfs)?;
        let scaled = tape.mul(f_illum, coef.scale)?;
        tape.add(scaled, coef.shift)
    }

    pub fn qm_attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        f_illum: Var,
        qms: &[QuantizationMatrix],
    ) -> Result<QmAttention> {
        let (n, h, w) = self.check_batch(tape, f_illum, qms.len())?;
        let x = Self::qm_input(tape, qms)?;
        let e = net::conv(tape, bound, "hif.qm.fc0", x, net::pointwise())?;
        let e = tape.leaky_relu(e, net::LEAKY_SLOPE)?;
        let e = net::conv(tape, bound, "hif.qm.fc1", e, net::pointwise())?;
        let e = tape.leaky_relu(e, net::LEAKY_SLOPE)?;
        let e = net::conv(tape, bound, "hif.qm.embed", e, net::pointwise())?;
        let tiled = tape.broadcast_to(e, &[n, self.channels, h, w])?;
        let cat = tape.concat(&[f_illum, tiled])?;
        let raw = net::conv(tape, bound, "hif.qm.att", cat, net::same3x3())?;
        Ok(QmAttention { map: tape.sigmoid(raw)? })
    }

    /// F_fea2 = F_illum ⊙ N_qm, spatial-broadcast.
    pub fn qm_branch<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        f_illum: Var,
        qms: &[QuantizationMatrix],
    ) -> Result<Var> {
        let att = self.qm_attention(tape, bound, f_illum, qms)?;
        tape.mul(f_illum, att.map)
    }

    /// Apply the configured branches to the features.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        f_illum: Var,
        qfs: &[QualityFactor],
        qms: &[QuantizationMatrix],
    ) -> Result<Var> {
        match self.mode {
            HifMode::Off => Ok(f_illum),
            HifMode::QfOnly => self.qf_branch(tape, bound, f_illum, qfs),
            HifMode::QmOnly => self.qm_branch(tape, bound, f_illum, qms),
            HifMode::Full => {
                let f1 = self.qf_branch(tape, bound, f_illum, qfs)?;
                let f2 = self.qm_branch(tape, bound, f_illum, qms)?;
                fuse(tape, f1, f2)
            }
        }
    }
}

/// F_fea = F_fea1 + F_fea2. Shapes must match exactly.
pub fn fuse<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::Dim(format!(
            "fuse shapes differ: {:?} vs {:?}",
            tape.value(a).shape(),
            tape.value(b).shape()
        )));
    }
    tape.add(a, b)
}

/// Plug-in handle wrapping a filter for insertion into a host enhancer whose
/// feature width may differ from the filter's. A mismatched width needs the
/// projection pair (1×1 in, 1×1 out); without it, attachment is refused.
pub struct HifAdapter {
    hif: Hif,
    host_channels: usize,
    projected: bool,
}

impl HifAdapter {
    pub fn attach<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        hif: Hif,
        host_channels: usize,
        allow_projection: bool,
    ) -> Result<Self> {
        let projected = host_channels != hif.channels();
        if projected {
            if !allow_projection {
                return Err(Error::Config(format!(
                    "host width {host_channels} does not match filter width {}; enable projection to adapt",
                    hif.channels()
                )));
            }
            store.register_conv2d(rng, "hif.adapt.in", hif.channels(), host_channels, 1, 1, true)?;
            store.register_conv2d(rng, "hif.adapt.out", host_channels, hif.channels(), 1, 1, true)?;
        }
        Ok(HifAdapter { hif, host_channels, projected })
    }

    /// Transform host features; output shape equals input shape.
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        features: Var,
        qfs: &[QualityFactor],
        qms: &[QuantizationMatrix],
    ) -> Result<Var> {
        let (_, c, _, _) = tape.value(features).dims4()?;
        if c != self.host_channels {
            return Err(Error::Dim(format!(
                "adapter built for {} host channels, got {c}",
                self.host_channels
            )));
        }
        let inner = if self.projected {
            net::conv(tape, bound, "hif.adapt.in", features, net::pointwise())?
        } else {
            features
        };
        let filtered = self.hif.forward(tape, bound, inner, qfs, qms)?;
        if self.projected {
            net::conv(tape, bound, "hif.adapt.out", filtered, net::pointwise())
        } else {
            Ok(filtered)
        }
    }
}
