//! The full pipeline model: illumination estimator, hybrid information
//! filter, and enhancer, registered in one parameter store.
//!
//! Components are registered conditionally. The brightness head only exists
//! when the trunk consumes the light-up image, and filter branches only
//! exist for the active mode, so every registered parameter participates in
//! every training step and a missing gradient after backward is a wiring
//! bug, not an expected state.

use image::RgbImage;
use rand::Rng;

use crate::enhancer::{Enhancer, EnhancerConfig};
use crate::error::{Error, Result};
use crate::hif::{Hif, HifMode};
use crate::illumination::{illum_prior, light_up, Estimator};
use crate::img;
use crate::jpeg::{qf_to_qm, ChannelKind, QualityFactor, QuantizationMatrix};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{crop_hw, pad_reflect_hw, Bound, ParamStore, Scalar};

/// What the enhancer trunk consumes as its base image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrunkInput {
    /// The light-up image (brightness map times input).
    LightUp,
    /// The raw compressed input; the brightness head is then absent.
    Comp,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub channels: usize,
    pub num_rmrb: usize,
    pub num_mrb: usize,
    pub hif_mode: HifMode,
    pub trunk_input: TrunkInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            num_rmrb: 4,
            num_mrb: 2,
            hif_mode: HifMode::Full,
            trunk_input: TrunkInput::LightUp,
        }
    }
}

impl ModelConfig {
    pub fn enhancer(&self) -> EnhancerConfig {
        EnhancerConfig {
            channels: self.channels,
            num_rmrb: self.num_rmrb,
            num_mrb: self.num_mrb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.enhancer().validate()
    }
}

pub struct ModelOutputs {
    pub i_en: Var,
    /// Present when the trunk consumes the light-up image.
    pub i_light_up: Option<Var>,
}

pub struct Model {
    config: ModelConfig,
    estimator: Estimator,
    hif: Hif,
    enhancer: Enhancer,
    param_count: usize,
}

impl Model {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        config: ModelConfig,
    ) -> Result<Self> {
        config.validate()?;
        let before = store.numel_total();
        let estimator = Estimator::register(
            store,
            rng,
            config.channels,
            config.trunk_input == TrunkInput::LightUp,
        )?;
        let hif = Hif::register(store, rng, config.channels, config.hif_mode)?;
        let enhancer = Enhancer::register(store, rng, config.enhancer())?;
        let param_count = store.numel_total() - before;
        Ok(Model { config, estimator, hif, enhancer, param_count })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// One forward pass over a batch. `i_comp` is N×3×H×W in [0,1] with H,W
    /// divisible by 4; `qfs`/`qms` hold the per-item compression priors.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        i_comp: Var,
        qfs: &[QualityFactor],
        qms: &[QuantizationMatrix],
    ) -> Result<ModelOutputs> {
        let prior = illum_prior(tape, i_comp)?;
        let illum = self.estimator.forward(tape, bound, i_comp, prior)?;
        let i_light_up = match self.config.trunk_input {
            TrunkInput::LightUp => {
                let bri = illum.brightness.ok_or_else(|| {
                    Error::Contract("light-up trunk requires the brightness head".into())
                })?;
                Some(light_up(tape, bri, i_comp)?)
            }
            TrunkInput::Comp => None,
        };
        let trunk = i_light_up.unwrap_or(i_comp);
        let f_fea = self.hif.forward(tape, bound, illum.features, qfs, qms)?;
        let i_en = self.enhancer.forward(tape, bound, trunk, f_fea)?;
        Ok(ModelOutputs { i_en, i_light_up })
    }

    /// Whole-image inference: reflection-pad to a multiple of 4, run the
    /// model without gradients, crop back, and convert to 8-bit.
    pub fn enhance_image<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        image: &RgbImage,
        qf: QualityFactor,
    ) -> Result<RgbImage> {
        let (h, w) = (image.height() as usize, image.width() as usize);
        let input = img::image_to_tensor::<T>(image);
        let pad_h = (4 - h % 4) % 4;
        let pad_w = (4 - w % 4) % 4;
        let padded = if pad_h == 0 && pad_w == 0 {
            input
        } else {
            pad_reflect_hw(&input, pad_h, pad_w)?
        };
        let qm = qf_to_qm(qf, ChannelKind::Luma);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(padded);
        let out = self.forward(&mut tape, &bound, x, &[qf], &[qm])?;
        let full = crop_hw(tape.value(out.i_en), h, w)?;
        let mut images = img::tensor_to_images(&full)?;
        Ok(images.remove(0))
    }
}
