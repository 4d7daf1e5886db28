//! Fast invariant suite behind the `selftest` subcommand: a few seconds of
//! spot checks covering the codec, the model contracts, autodiff, and the
//! checkpoint container.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{QfMode, TrainConfig};
use crate::data::sample_qf;
use crate::enhancer::{Enhancer, EnhancerConfig};
use crate::error::{Error, Result};
use crate::hif::{Hif, HifMode};
use crate::jpeg::{dct, qf_to_qm, ChannelKind, QualityFactor};
use crate::metrics::{psnr, ssim};
use crate::tensor::{gradcheck, Adam, ConvSpec, ParamStore, Tape, Tensor};

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<()>,
}

fn fail(msg: String) -> Result<()> {
    Err(Error::Contract(msg))
}

fn quantization_tables() -> Result<()> {
    let qf50 = QualityFactor::new(50)?;
    let luma = qf_to_qm(qf50, ChannelKind::Luma);
    let chroma = qf_to_qm(qf50, ChannelKind::Chroma);
    if luma.entries()[0] != 16 || luma.entries()[63] != 99 || chroma.entries()[0] != 17 {
        return fail("QF 50 does not reproduce the base tables".into());
    }
    let qf100 = QualityFactor::new(100)?;
    if qf_to_qm(qf100, ChannelKind::Luma).entries().iter().any(|&v| v != 1) {
        return fail("QF 100 luma table is not all ones".into());
    }
    let coarse = qf_to_qm(QualityFactor::new(10)?, ChannelKind::Luma);
    if coarse.entries()[0] <= luma.entries()[0] {
        return fail("QF 10 should quantize more coarsely than QF 50".into());
    }
    Ok(())
}

fn dct_round_trip() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    for _ in 0..200 {
        let block: [f64; 64] = core::array::from_fn(|_| rng.gen_range(-128.0..128.0));
        let back = dct::inverse(&dct::forward(&block)?)?;
        for (a, b) in block.iter().zip(&back) {
            if (a - b).abs() > 1e-6 {
                return fail(format!("DCT round trip error {:e}", (a - b).abs()));
            }
        }
    }
    Ok(())
}

fn zero_enhancer_is_identity() -> Result<()> {
    let config = EnhancerConfig { channels: 4, num_rmrb: 1, num_mrb: 1 };
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let enhancer = Enhancer::register(&mut store, &mut rng, config)?;
    let zero: Vec<(String, usize)> =
        store.iter().map(|(n, t)| (n.to_string(), t.numel())).collect();
    for (name, numel) in zero {
        store.set_data(&name, &vec![0.0; numel])?;
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let n: usize = 2 * 3 * 8 * 8;
    let data: Vec<f64> = (0..n).map(|i| (i % 251) as f64 / 255.0).collect();
    let x = tape.constant(Tensor::new(vec![2, 3, 8, 8], data.clone())?);
    let f = tape.constant(Tensor::zeros(vec![2, 4, 8, 8]));
    let out = enhancer.forward(&mut tape, &bound, x, f)?;
    if tape.value(out).data() != &data[..] {
        return fail("zeroed enhancer altered its input".into());
    }
    Ok(())
}

fn zero_filter_composition() -> Result<()> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hif = Hif::register(&mut store, &mut rng, 4, HifMode::Full)?;
    let zero: Vec<(String, usize)> =
        store.iter().map(|(n, t)| (n.to_string(), t.numel())).collect();
    for (name, numel) in zero {
        store.set_data(&name, &vec![0.0; numel])?;
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let feats: Vec<f64> = (0..2 * 4 * 6 * 6).map(|i| (i % 17) as f64 * 0.05 - 0.3).collect();
    let f = tape.constant(Tensor::new(vec![2, 4, 6, 6], feats.clone())?);
    let qfs = vec![QualityFactor::new(30)?, QualityFactor::new(70)?];
    let qms = vec![
        qf_to_qm(qfs[0], ChannelKind::Luma),
        qf_to_qm(qfs[1], ChannelKind::Luma),
    ];
    let out = hif.forward(&mut tape, &bound, f, &qfs, &qms)?;
    for (o, v) in tape.value(out).data().iter().zip(&feats) {
        if *o != v + 0.5 * v {
            return fail("zeroed filter is not the pinned 1.5x composition".into());
        }
    }
    Ok(())
}

fn gradients() -> Result<()> {
    let x = Tensor::<f64>::new(
        vec![1, 2, 5, 5],
        (0..50).map(|i| ((i * 13 + 3) % 31) as f64 * 0.1 - 1.2).collect(),
    )?;
    let w = Tensor::<f64>::new(
        vec![2, 2, 3, 3],
        (0..36).map(|i| ((i * 7 + 1) % 23) as f64 * 0.08 - 0.8).collect(),
    )?;
    let worst = gradcheck::check_gradients(
        &[x, w],
        |tape, vars| {
            let spec = ConvSpec { stride: 1, padding: 1, groups: 1 };
            let y = tape.conv2d(vars[0], vars[1], None, spec)?;
            let a = tape.leaky_relu(y, 0.2)?;
            let s = tape.sigmoid(a)?;
            tape.mean_all(s)
        },
        1e-5,
        1e-6,
    )?;
    if worst > 1e-6 {
        return fail(format!("gradient gap {worst:e}"));
    }
    Ok(())
}

fn checkpoint_round_trip() -> Result<()> {
    let mut config = TrainConfig::default();
    config.model.channels = 4;
    config.model.num_rmrb = 1;
    config.model.num_mrb = 1;
    let (store, _) = crate::train::build_model(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let adam = Adam::<f32>::new(config.lr, config.beta1, config.beta2, config.eps);
    let ckpt = Checkpoint::capture(&config, 0, &rng, &adam, &store);
    let bytes = ckpt.to_bytes()?;
    let back = Checkpoint::from_bytes(&bytes)?;
    if back.to_bytes()? != bytes {
        return fail("checkpoint round trip is not byte-stable".into());
    }
    Ok(())
}

fn qf_sampling() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..200 {
        let qf = sample_qf(&mut rng, QfMode::Random(10, 90)).get();
        if !(10..=90).contains(&qf) {
            return fail(format!("draw {qf} outside [10, 90]"));
        }
        seen.insert(qf);
    }
    if seen.len() < 20 {
        return fail(format!("only {} distinct QFs in 200 draws", seen.len()));
    }
    for _ in 0..10 {
        let qf = sample_qf(&mut rng, QfMode::Fixed(QualityFactor::new(80)?));
        if qf.get() != 80 {
            return fail("fixed mode did not return its constant".into());
        }
    }
    Ok(())
}

fn metric_identities() -> Result<()> {
    let img = crate::synth::scene(32, 77);
    let p = psnr(&img, &img)?;
    if p.is_finite() {
        return fail("psnr of an image with itself should be infinite".into());
    }
    let s = ssim(&img, &img)?;
    if s != 1.0 {
        return fail(format!("ssim of an image with itself is {s}, not 1"));
    }
    Ok(())
}

/// Run every check; failures are collected, not short-circuited.
pub fn run_all() -> Vec<Check> {
    vec![
        Check { name: "quantization tables", outcome: quantization_tables() },
        Check { name: "dct round trip", outcome: dct_round_trip() },
        Check { name: "zero enhancer identity", outcome: zero_enhancer_is_identity() },
        Check { name: "zero filter composition", outcome: zero_filter_composition() },
        Check { name: "gradient spot check", outcome: gradients() },
        Check { name: "checkpoint round trip", outcome: checkpoint_round_trip() },
        Check { name: "qf sampling", outcome: qf_sampling() },
        Check { name: "metric identities", outcome: metric_identities() },
    ]
}
