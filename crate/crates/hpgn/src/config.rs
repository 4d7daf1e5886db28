//! Run configuration: a line-oriented `key=value` text format.
//!
//! Every key has a default; unknown or duplicate keys are rejected so typos
//! fail loudly instead of silently training the wrong model. `to_text`
//! renders a canonical form (fixed key order, one per line) whose FNV-1a
//! hash identifies the configuration in checkpoints and reports.
//!
//! Keys:
//!   seed             u64, RNG seed for init and data sampling
//!   qf_mode          `fixed:Q` or `random:LO,HI` with 1 ≤ LO ≤ HI ≤ 100
//!   crop             training crop size, divisible by 4
//!   batch            examples per step, ≥ 1
//!   steps            optimizer steps to run
//!   lr, beta1, beta2, eps   Adam hyperparameters
//!   channels         feature width C, multiple of 4
//!   num_rmrb         recursive blocks in the enhancer
//!   num_mrb          multi-scale blocks per recursive block
//!   hif_mode         off | qf | qm | full
//!   trunk_input      light_up | comp
//!   lambda_per       perceptual weight, ≥ 0
//!   perceptual       on | off
//!   perceptual_seed  u64 seed of the frozen feature extractor
//!   checkpoint_every 0 = final only, otherwise every N steps
//!   flip             on | off, random horizontal flip augmentation

use crate::error::{Error, Result};
use crate::hif::HifMode;
use crate::jpeg::QualityFactor;
use crate::loss::LossConfig;
use crate::model::{ModelConfig, TrunkInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QfMode {
    Fixed(QualityFactor),
    Random(u8, u8),
}

impl QfMode {
    pub fn to_value(self) -> String {
        match self {
            QfMode::Fixed(qf) => format!("fixed:{qf}"),
            QfMode::Random(lo, hi) => format!("random:{lo},{hi}"),
        }
    }

    pub fn parse(value: &str) -> Result<Self> {
        let bad = || Error::Config(format!("qf_mode {value:?} is not fixed:Q or random:LO,HI"));
        if let Some(q) = value.strip_prefix("fixed:") {
            let q: i64 = q.parse().map_err(|_| bad())?;
            return Ok(QfMode::Fixed(QualityFactor::new(q)?));
        }
        if let Some(range) = value.strip_prefix("random:") {
            let (lo, hi) = range.split_once(',').ok_or_else(bad)?;
            let lo: u8 = lo.parse().map_err(|_| bad())?;
            let hi: u8 = hi.parse().map_err(|_| bad())?;
            if lo < 1 || lo > hi || hi > 100 {
                return Err(Error::Config(format!(
                    "qf_mode range must satisfy 1 <= lo <= hi <= 100, got {lo}..={hi}"
                )));
            }
            return Ok(QfMode::Random(lo, hi));
        }
        Err(bad())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub qf_mode: QfMode,
    pub crop: usize,
    pub batch: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub perceptual_seed: u64,
    pub checkpoint_every: u64,
    pub flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            qf_mode: QfMode::Random(10, 90),
            crop: 64,
            batch: 4,
            steps: 2000,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            perceptual_seed: 7,
            checkpoint_every: 0,
            flip: false,
        }
    }
}

fn onoff(value: &str, key: &str) -> Result<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!("{key} must be on or off, got {other:?}"))),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.crop % 4 != 0 || self.crop == 0 {
            return Err(Error::Config(format!(
                "crop must be a positive multiple of 4, got {}",
                self.crop
            )));
        }
        if self.loss.perceptual && self.loss.lambda_per > 0.0 && self.crop < 16 {
            return Err(Error::Config(format!(
                "crop {} is too small for the perceptual term (needs 16)",
                self.crop
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {beta}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let hif_mode = match self.model.hif_mode {
            HifMode::Off => "off",
            HifMode::QfOnly => "qf",
            HifMode::QmOnly => "qm",
            HifMode::Full => "full",
        };
        let trunk = match self.model.trunk_input {
            TrunkInput::LightUp => "light_up",
            TrunkInput::Comp => "comp",
        };
        format!(
            "seed={}\nqf_mode={}\ncrop={}\nbatch={}\nsteps={}\nlr={}\nbeta1={}\nbeta2={}\neps={}\n\
             channels={}\nnum_rmrb={}\nnum_mrb={}\nhif_mode={}\ntrunk_input={}\nlambda_per={}\n\
             perceptual={}\nperceptual_seed={}\ncheckpoint_every={}\nflip={}\n",
            self.seed,
            self.qf_mode.to_value(),
            self.crop,
            self.batch,
            self.steps,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.model.channels,
            self.model.num_rmrb,
            self.model.num_mrb,
            hif_mode,
            trunk,
            self.loss.lambda_per,
            if self.loss.perceptual { "on" } else { "off" },
            self.perceptual_seed,
            self.checkpoint_every,
            if self.flip { "on" } else { "off" },
        )
    }

    /// FNV-1a over the canonical text.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for byte in self.to_text().bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Parse `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: {raw:?} is not key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key.to_string()) {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
            seen.push(key.to_string());
            let bad_num =
                |what: &str| Error::Config(format!("{key} must be {what}, got {value:?}"));
            match key {
                "seed" => config.seed = value.parse().map_err(|_| bad_num("a u64"))?,
                "qf_mode" => config.qf_mode = QfMode::parse(value)?,
                "crop" => config.crop = value.parse().map_err(|_| bad_num("an integer"))?,
                "batch" => config.batch = value.parse().map_err(|_| bad_num("an integer"))?,
                "steps" => config.steps = value.parse().map_err(|_| bad_num("an integer"))?,
                "lr" => config.lr = value.parse().map_err(|_| bad_num("a float"))?,
                "beta1" => config.beta1 = value.parse().map_err(|_| bad_num("a float"))?,
                "beta2" => config.beta2 = value.parse().map_err(|_| bad_num("a float"))?,
                "eps" => config.eps = value.parse().map_err(|_| bad_num("a float"))?,
                "channels" => {
                    config.model.channels = value.parse().map_err(|_| bad_num("an integer"))?
                }
                "num_rmrb" => {
                    config.model.num_rmrb = value.parse().map_err(|_| bad_num("an integer"))?
                }
                "num_mrb" => {
                    config.model.num_mrb = value.parse().map_err(|_| bad_num("an integer"))?
                }
                "hif_mode" => {
                    config.model.hif_mode = match value {
                        "off" => HifMode::Off,
                        "qf" => HifMode::QfOnly,
                        "qm" => HifMode::QmOnly,
                        "full" => HifMode::Full,
                        other => {
                            return Err(Error::Config(format!(
                                "hif_mode must be off, qf, qm, or full, got {other:?}"
                            )))
                        }
                    }
                }
                "trunk_input" => {
                    config.model.trunk_input = match value {
                        "light_up" => TrunkInput::LightUp,
                        "comp" => TrunkInput::Comp,
                        other => {
                            return Err(Error::Config(format!(
                                "trunk_input must be light_up or comp, got {other:?}"
                            )))
                        }
                    }
                }
                "lambda_per" => {
                    config.loss.lambda_per = value.parse().map_err(|_| bad_num("a float"))?
                }
                "perceptual" => config.loss.perceptual = onoff(value, key)?,
                "perceptual_seed" => {
                    config.perceptual_seed = value.parse().map_err(|_| bad_num("a u64"))?
                }
                "checkpoint_every" => {
                    config.checkpoint_every = value.parse().map_err(|_| bad_num("an integer"))?
                }
                "flip" => config.flip = onoff(value, key)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        config.validate()?;
        Ok(config)
    }
}
