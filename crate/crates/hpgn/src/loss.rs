//! Training loss: mean absolute error plus a weighted structural penalty
//! from a fixed random-feature extractor.
//!
//! The extractor stands in for a pretrained deep network: four strided
//! convolutions (3→16→32→64→64) with fixed seed-deterministic weights that
//! never receive gradients. Random deep features still differ when structure
//! differs, which is the property the penalty needs, and the fixed seed
//! keeps runs reproducible. It can be switched off for a pure L1 loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{ConvSpec, ParamStore, Scalar};

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub lambda_per: f64,
    pub perceptual: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_per: 0.01, perceptual: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_per >= 0.0) {
            return Err(Error::Config(format!(
                "perceptual weight must be non-negative, got {}",
                self.lambda_per
            )));
        }
        Ok(())
    }
}

/// Mean absolute difference over all elements.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::Dim(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            tape.value(a).shape(),
            tape.value(b).shape()
        )));
    }
    let diff = tape.sub(a, b)?;
    let mag = tape.abs(diff)?;
    tape.mean_all(mag)
}

const STAGE_WIDTHS: [usize; 4] = [16, 32, 64, 64];

/// Frozen four-stage strided feature stack. Weights are drawn once from the
/// seed and bound as constants, so gradients flow to the images only.
pub struct PerceptualExtractor<T: Scalar> {
    store: ParamStore<T>,
    seed: u64,
}

impl<T: Scalar> PerceptualExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut c_in = 3;
        for (stage, &c_out) in STAGE_WIDTHS.iter().enumerate() {
            store
                .register_conv2d(&mut rng, &format!("per.s{stage}"), c_out, c_in, 3, 3, true)
                .expect("fresh store accepts distinct names");
            c_in = c_out;
        }
        PerceptualExtractor { store, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stage-3 and stage-4 feature maps of an N×3×H×W image, H,W ≥ 16.
    fn features(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Var)> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != 3 {
            return Err(Error::Dim(format!("feature stack expects 3 channels, got {c}")));
        }
        if h < 16 || w < 16 {
            return Err(Error::Dim(format!(
                "feature stack needs at least 16x16 input, got {h}x{w}"
            )));
        }
        let bound = self.store.bind_frozen(tape);
        let stride2 = ConvSpec { stride: 2, padding: 1, groups: 1 };
        let mut h3 = x;
        let mut stage3 = x;
        for stage in 0..4 {
            h3 = net::conv(tape, &bound, &format!("per.s{stage}"), h3, stride2)?;
            h3 = tape.leaky_relu(h3, net::LEAKY_SLOPE)?;
            if stage == 2 {
                stage3 = h3;
            }
        }
        Ok((stage3, h3))
    }

    /// Mean absolute feature difference, averaged over the two tapped stages.
    pub fn loss(&self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(Error::Dim(format!(
                "loss inputs differ in shape: {:?} vs {:?}",
                tape.value(a).shape(),
                tape.value(b).shape()
            )));
        }
        let (a3, a4) = self.features(tape, a)?;
        let (b3, b4) = self.features(tape, b)?;
        let l3 = l1_loss(tape, a3, b3)?;
        let l4 = l1_loss(tape, a4, b4)?;
        let sum = tape.add(l3, l4)?;
        tape.mul_scalar(sum, 0.5)
    }
}

/// l1 + lambda_per · perceptual. The extractor is only consulted when the
/// perceptual term is on and weighted; `None` is a configuration error then.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    a: Var,
    b: Var,
    config: &LossConfig,
    extractor: Option<&PerceptualExtractor<T>>,
) -> Result<Var> {
    config.validate()?;
    let l1 = l1_loss(tape, a, b)?;
    if !config.perceptual || config.lambda_per == 0.0 {
        return Ok(l1);
    }
    let Some(extractor) = extractor else {
        return Err(Error::Config(
            "perceptual term is enabled but no feature extractor was supplied".into(),
        ));
    };
    let per = extractor.loss(tape, a, b)?;
    let weighted = tape.mul_scalar(per, config.lambda_per)?;
    tape.add(l1, weighted)
}
