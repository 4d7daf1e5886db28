//! Training loop, checkpoint-driven evaluation, and the branch-ablation
//! harness.
//!
//! Determinism contract: one seed feeds three fixed ChaCha streams —
//! parameter initialization, example sampling, and evaluation QF draws.
//! Separating initialization from sampling means model variants of
//! different sizes (the ablation set) still consume identical example
//! sequences, which is what makes their losses comparable. Pairs are
//! visited round-robin; the RNG only decides QF, crop offsets, and flips.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{QfMode, TrainConfig};
use crate::data::{make_example, sample_qf, ImagePair};
use crate::error::{Error, Result};
use crate::hif::HifMode;
use crate::img::batch_to_tensor;
use crate::jpeg::compress_roundtrip;
use crate::loss::{total_loss, PerceptualExtractor};
use crate::metrics::{psnr, ssim, MetricRecord, MetricsReport};
use crate::model::Model;
use crate::tensor::{Adam, ParamStore, Scalar, Tape};

const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

/// Register a fresh model for this config. The initialization stream is
/// fixed, so the same config and seed always produce the same parameters.
pub fn build_model(config: &TrainConfig) -> Result<(ParamStore<f32>, Model)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    let mut store = ParamStore::new();
    let model = Model::register(&mut store, &mut rng, config.model)?;
    Ok((store, model))
}

/// Rebuild a model from a checkpoint: register the same structure, then
/// overwrite every parameter, verifying names and shapes line up.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(ParamStore<f32>, Model)> {
    let (mut store, model) = build_model(&ckpt.config)?;
    if store.len() != ckpt.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, config builds {}",
            ckpt.params.len(),
            store.len()
        )));
    }
    let expected: Vec<(String, Vec<usize>)> =
        store.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
    for ((name, tensor), (expect_name, expect_shape)) in ckpt.params.iter().zip(&expected) {
        if name != expect_name || tensor.shape() != &expect_shape[..] {
            return Err(Error::Checkpoint(format!(
                "checkpoint parameter {name:?} {:?} does not match expected {expect_name:?} {expect_shape:?}",
                tensor.shape()
            )));
        }
        store.set_data(name, tensor.data())?;
    }
    Ok((store, model))
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// One entry per optimizer step.
    pub losses: Vec<f64>,
}

/// Run the loop. `on_step` observes `(step index, loss)` after each step;
/// when `checkpoint_path` is set, scheduled and final checkpoints are
/// written there atomically.
pub fn train(
    config: &TrainConfig,
    pairs: &[ImagePair],
    checkpoint_path: Option<&Path>,
    mut on_step: impl FnMut(u64, f64),
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Ingest("training needs at least one image pair".into()));
    }
    let (mut store, model) = build_model(config)?;
    let extractor = if config.loss.perceptual && config.loss.lambda_per > 0.0 {
        Some(PerceptualExtractor::new(config.perceptual_seed))
    } else {
        None
    };
    let mut adam = Adam::new(config.lr, config.beta1, config.beta2, config.eps);
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(DATA_STREAM);

    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let mut comps = Vec::with_capacity(config.batch);
        let mut highs = Vec::with_capacity(config.batch);
        let mut qfs = Vec::with_capacity(config.batch);
        let mut qms = Vec::with_capacity(config.batch);
        let mut names = Vec::with_capacity(config.batch);
        for i in 0..config.batch {
            let pair = &pairs[(step as usize * config.batch + i) % pairs.len()];
            let example =
                make_example(pair, &mut data_rng, config.crop, config.qf_mode, config.flip)?;
            names.push(pair.name.clone());
            qfs.push(example.qf);
            qms.push(example.qm);
            comps.push(example.i_comp);
            highs.push(example.i_high);
        }
        let i_comp = batch_to_tensor::<f32>(&comps)?;
        let i_high = batch_to_tensor::<f32>(&highs)?;

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.constant(i_comp);
        let target = tape.constant(i_high);
        let out = model.forward(&mut tape, &bound, x, &qfs, &qms)?;
        let loss = total_loss(&mut tape, out.i_en, target, &config.loss, extractor.as_ref())?;
        let loss_value = Scalar::to_f64(tape.value(loss).data()[0]);
        if !loss_value.is_finite() {
            let qf_list: Vec<u8> = qfs.iter().map(|q| q.get()).collect();
            return Err(Error::Numeric(format!(
                "non-finite loss {loss_value} at step {step} (pairs {names:?}, qfs {qf_list:?})"
            )));
        }
        tape.backward(loss)?;
        let grads = store.grads(&bound, &tape)?;
        adam.step(&mut store, &grads)
            .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
        losses.push(loss_value);
        on_step(step, loss_value);

        if let Some(path) = checkpoint_path {
            let done = step + 1;
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.steps {
                Checkpoint::capture(config, done, &data_rng, &adam, &store).save(path)?;
            }
        }
    }

    let checkpoint = Checkpoint::capture(config, config.steps, &data_rng, &adam, &store);
    if let Some(path) = checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome { checkpoint, losses })
}

/// Full-image evaluation of a checkpoint. Each image is compressed at a QF
/// drawn from `qf_mode` (the evaluation stream is seeded by the checkpoint's
/// config seed, so reports are reproducible), enhanced, and scored against
/// the pristine high image.
pub fn evaluate(ckpt: &Checkpoint, pairs: &[ImagePair], qf_mode: QfMode) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Ingest("evaluation needs at least one image pair".into()));
    }
    let (store, model) = model_from_checkpoint(ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
    rng.set_stream(EVAL_STREAM);
    let mut records = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let qf = sample_qf(&mut rng, qf_mode);
        let comp = compress_roundtrip(&pair.low, qf)?;
        let enhanced = model.enhance_image(&store, &comp, qf)?;
        records.push(MetricRecord {
            path: pair.name.clone(),
            qf: qf.get(),
            psnr_db: psnr(&enhanced, &pair.high)?,
            ssim: ssim(&enhanced, &pair.high)?,
        });
    }
    Ok(MetricsReport { records, seed: ckpt.config.seed, config_hash: ckpt.config.hash() })
}

pub struct AblationVariant {
    pub label: &'static str,
    pub qf_branch: bool,
    pub qm_branch: bool,
    pub param_count: usize,
    pub final_loss: f64,
    pub report: MetricsReport,
}

pub struct AblationOutcome {
    pub variants: Vec<AblationVariant>,
    pub table: String,
}

/// Train and evaluate the four branch combinations under one seed and
/// budget, and render the comparison table.
pub fn ablation(
    config: &TrainConfig,
    pairs: &[ImagePair],
    mut on_variant: impl FnMut(&str),
) -> Result<AblationOutcome> {
    if config.steps == 0 {
        return Err(Error::Config(
            "the ablation comparison needs at least one training step".into(),
        ));
    }
    let modes = [
        ("Baseline", HifMode::Off),
        ("+QF-branch", HifMode::QfOnly),
        ("+QM-branch", HifMode::QmOnly),
        ("Full", HifMode::Full),
    ];
    let mut variants = Vec::with_capacity(modes.len());
    for (label, mode) in modes {
        on_variant(label);
        let mut variant_config = *config;
        variant_config.model.hif_mode = mode;
        let outcome = train(&variant_config, pairs, None, |_, _| {})?;
        let report = evaluate(&outcome.checkpoint, pairs, variant_config.qf_mode)?;
        variants.push(AblationVariant {
            label,
            qf_branch: mode.uses_qf(),
            qm_branch: mode.uses_qm(),
            param_count: outcome.checkpoint.params.iter().map(|(_, t)| t.numel()).sum(),
            final_loss: *outcome.losses.last().expect("steps guarded nonzero above"),
            report,
        });
    }

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<12} {:^9} {:^9} {:>10} {:>12} {:>9} {:>8}",
        "Variant", "QF", "QM", "Params", "Final loss", "PSNR", "SSIM"
    );
    for v in &variants {
        let _ = writeln!(
            table,
            "{:<12} {:^9} {:^9} {:>10} {:>12.6} {:>9.3} {:>8.4}",
            v.label,
            if v.qf_branch { "\u{2713}" } else { "" },
            if v.qm_branch { "\u{2713}" } else { "" },
            v.param_count,
            v.final_loss,
            v.report.mean_psnr_db(),
            v.report.mean_ssim(),
        );
    }
    Ok(AblationOutcome { variants, table })
}
