//! Image enhancer: a residual trunk of recursive multi-scale blocks.
//!
//! Every block is residual in delta form (block(x) = x + f(x)), so zeroing
//! all parameters makes each block, and the whole enhancer, the identity on
//! in-range input. The multi-scale block runs context blocks at full, half
//! and quarter resolution and fuses them with per-channel softmax weights
//! derived from the pooled concatenation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Bound, ParamStore, Scalar};

#[derive(Clone, Copy, Debug)]
pub struct EnhancerConfig {
    pub channels: usize,
    pub num_rmrb: usize,
    pub num_mrb: usize,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        EnhancerConfig { channels: 32, num_rmrb: 4, num_mrb: 2 }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rmrb < 1 || self.num_mrb < 1 {
            return Err(Error::Config(format!(
                "block counts must be at least 1, got {} recursive blocks of {}",
                self.num_rmrb, self.num_mrb
            )));
        }
        if self.channels < 4 || self.channels % 4 != 0 {
            return Err(Error::Config(format!(
                "width must be a multiple of 4 and at least 4, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

fn check_quarterable(h: usize, w: usize) -> Result<()> {
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Dim(format!(
            "spatial extent {h}x{w} is not divisible by 4; pad the input (reflection) and crop the output"
        )));
    }
    Ok(())
}

/// Local 3x3 features gated by a pooled channel sigmoid, plus the input.
pub struct ContextBlock {
    prefix: String,
}

impl ContextBlock {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        prefix: &str,
        channels: usize,
    ) -> Result<Self> {
        store.register_conv2d(rng, &format!("{prefix}.local"), channels, channels, 3, 3, true)?;
        store.register_conv2d(rng, &format!("{prefix}.gate"), channels, channels, 1, 1, true)?;
        Ok(ContextBlock { prefix: prefix.to_string() })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let local = net::conv(tape, bound, &format!("{}.local", self.prefix), x, net::same3x3())?;
        let local = tape.leaky_relu(local, net::LEAKY_SLOPE)?;
        let pooled = tape.global_avg_pool(x)?;
        let gate = net::conv(tape, bound, &format!("{}.gate", self.prefix), pooled, net::pointwise())?;
        let gate = tape.sigmoid(gate)?;
        let gated = tape.mul(local, gate)?;
        tape.add(gated, x)
    }
}

/// Per-channel softmax weights for the three scale branches. Exposed so the
/// normalization property is directly testable.
pub struct MrbTrace {
    pub output: Var,
    pub weights: [Var; 3],
}

/// Three-scale residual block: context blocks at full, half and quarter
/// resolution, softmax-weighted sum, 1x1 channel fusion, plus the input.
pub struct Mrb {
    prefix: String,
    channels: usize,
}

impl Mrb {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        prefix: &str,
        channels: usize,
    ) -> Result<Self> {
        for scale in 0..3 {
            ContextBlock::register(store, rng, &format!("{prefix}.cb{scale}"), channels)?;
        }
        for branch in 0..3 {
            store.register_conv2d(
                rng,
                &format!("{prefix}.w{branch}"),
                channels,
                3 * channels,
                1,
                1,
                true,
            )?;
        }
        store.register_conv2d(rng, &format!("{prefix}.fuse"), channels, channels, 1, 1, true)?;
        Ok(Mrb { prefix: prefix.to_string(), channels })
    }

    fn cb(&self, scale: usize) -> ContextBlock {
        ContextBlock { prefix: format!("{}.cb{scale}", self.prefix) }
    }

    pub fn trace<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<MrbTrace> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::Dim(format!(
                "block is {} channels wide, input has {c}",
                self.channels
            )));
        }
        check_quarterable(h, w)?;

        let b0 = self.cb(0).forward(tape, bound, x)?;
        let half = tape.down2(x)?;
        let b1 = self.cb(1).forward(tape, bound, half)?;
        let b1 = tape.up2(b1)?;
        let quarter = tape.down2(half)?;
        let b2 = self.cb(2).forward(tape, bound, quarter)?;
        let b2 = tape.up2(b2)?;
        let b2 = tape.up2(b2)?;

        let cat = tape.concat(&[b0, b1, b2])?;
        let pooled = tape.global_avg_pool(cat)?;
        let mut logits = [b0; 3];
        for (branch, slot) in logits.iter_mut().enumerate() {
            *slot = net::conv(tape, bound, &format!("{}.w{branch}", self.prefix), pooled, net::pointwise())?;
        }
        let e: Vec<Var> = logits.iter().map(|&l| tape.exp(l)).collect::<Result<_>>()?;
        let sum01 = tape.add(e[0], e[1])?;
        let total = tape.add(sum01, e[2])?;
        let weights = [
            tape.div(e[0], total)?,
            tape.div(e[1], total)?,
            tape.div(e[2], total)?,
        ];

        let p0 = tape.mul(b0, weights[0])?;
        let p1 = tape.mul(b1, weights[1])?;
        let p2 = tape.mul(b2, weights[2])?;
        let s01 = tape.add(p0, p1)?;
        let mixed = tape.add(s01, p2)?;
        let fused = net::conv(tape, bound, &format!("{}.fuse", self.prefix), mixed, net::pointwise())?;
        let output = tape.add(fused, x)?;
        Ok(MrbTrace { output, weights })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        Ok(self.trace(tape, bound, x)?.output)
    }
}

/// Chain of multi-scale blocks wrapped in an outer residual. The chain
/// contributes as a delta, out = x + (chain(x) - x), so a zero-parameter
/// chain leaves x untouched rather than doubling it.
pub struct Rmrb {
    blocks: Vec<Mrb>,
}

impl Rmrb {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        prefix: &str,
        channels: usize,
        num_mrb: usize,
    ) -> Result<Self> {
        let blocks = (0..num_mrb)
            .map(|m| Mrb::register(store, rng, &format!("{prefix}.m{m}"), channels))
            .collect::<Result<_>>()?;
        Ok(Rmrb { blocks })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, bound, h)?;
        }
        let delta = tape.sub(h, x)?;
        tape.add(x, delta)
    }
}

pub struct Enhancer {
    config: EnhancerConfig,
    rmrbs: Vec<Rmrb>,
    param_count: usize,
}

impl Enhancer {
    /// Register head (3→C), the recursive block stack, and tail (C→3) under
    /// the `enh.` prefix.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        config: EnhancerConfig,
    ) -> Result<Self> {
        config.validate()?;
        let before = store.numel_total();
        store.register_conv2d(rng, "enh.head", config.channels, 3, 3, 3, true)?;
        let rmrbs = (0..config.num_rmrb)
            .map(|r| Rmrb::register(store, rng, &format!("enh.r{r}"), config.channels, config.num_mrb))
            .collect::<Result<_>>()?;
        store.register_conv2d(rng, "enh.tail", 3, config.channels, 3, 3, true)?;
        Ok(Enhancer { config, rmrbs, param_count: store.numel_total() - before })
    }

    pub fn config(&self) -> EnhancerConfig {
        self.config
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// trunk_input (N×3×H×W) and injected features (N×C×H×W) to the enhanced
    /// image, clamped to [0,1]. H and W must be divisible by 4.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        trunk_input: Var,
        f_fea: Var,
    ) -> Result<Var> {
        let (n, c, h, w) = tape.value(trunk_input).dims4()?;
        if c != 3 {
            return Err(Error::Dim(format!("trunk input must have 3 channels, got {c}")));
        }
        check_quarterable(h, w)?;
        let expected = [n, self.config.channels, h, w];
        if tape.value(f_fea).shape() != expected {
            return Err(Error::Dim(format!(
                "injected features must be {expected:?}, got {:?}",
                tape.value(f_fea).shape()
            )));
        }

        let head = net::conv(tape, bound, "enh.head", trunk_input, net::same3x3())?;
        let mut hvar = tape.add(head, f_fea)?;
        for rmrb in &self.rmrbs {
            hvar = rmrb.forward(tape, bound, hvar)?;
        }
        let tail = net::conv(tape, bound, "enh.tail", hvar, net::same3x3())?;
        let out = tape.add(tail, trunk_input)?;
        tape.clamp(out, 0.0, 1.0)
    }
}
