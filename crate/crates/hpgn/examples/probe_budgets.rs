//! Full-scale dry run of the overfit and ablation budgets. Prints the
//! quality margins and wall times the acceptance suite asserts, so budget
//! changes can be vetted without editing the tests.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hpgn::config::{QfMode, TrainConfig};
use hpgn::data::{ingest, make_example};
use hpgn::jpeg::QualityFactor;
use hpgn::metrics::psnr;
use hpgn::synth;
use hpgn::train::{self, model_from_checkpoint};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    synth::write_pairs(dir.path(), &synth::desk_pairs(4, 128, 7)).unwrap();
    let pairs = ingest(dir.path()).unwrap();
    let config = TrainConfig::default();

    let t0 = Instant::now();
    let outcome = train::train(&config, &pairs, None, |step, loss| {
        if step % 100 == 0 || step + 1 == config.steps {
            eprintln!("step {step}: loss {loss:.6} at {:.1}s", t0.elapsed().as_secs_f64());
        }
    })
    .unwrap();
    println!("train: {:.1} min", t0.elapsed().as_secs_f64() / 60.0);

    let (store, model) = model_from_checkpoint(&outcome.checkpoint).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let count = 32;
    let (mut en_sum, mut comp_sum) = (0.0, 0.0);
    for i in 0..count {
        let pair = &pairs[i % pairs.len()];
        let ex = make_example(pair, &mut rng, config.crop, config.qf_mode, config.flip).unwrap();
        let en = model.enhance_image(&store, &ex.i_comp, ex.qf).unwrap();
        en_sum += psnr(&en, &ex.i_high).unwrap();
        comp_sum += psnr(&ex.i_comp, &ex.i_high).unwrap();
    }
    let (en_mean, comp_mean) = (en_sum / count as f64, comp_sum / count as f64);
    println!("crops: enhanced {en_mean:.2} dB vs compressed {comp_mean:.2} dB (margin {:.2}, need >= 4)", en_mean - comp_mean);

    let mut untrained_config = config;
    untrained_config.steps = 0;
    let untrained = train::train(&untrained_config, &pairs, None, |_, _| {}).unwrap();
    let eval_mode = QfMode::Fixed(QualityFactor::new(80).unwrap());
    let trained_eval = train::evaluate(&outcome.checkpoint, &pairs, eval_mode).unwrap();
    let untrained_eval = train::evaluate(&untrained.checkpoint, &pairs, eval_mode).unwrap();
    println!(
        "eval80: trained {:.2} dB vs untrained {:.2} dB (margin {:.2}, need >= 3)",
        trained_eval.mean_psnr_db(),
        untrained_eval.mean_psnr_db(),
        trained_eval.mean_psnr_db() - untrained_eval.mean_psnr_db()
    );

    let mut ablation_config = config;
    ablation_config.steps = 300;
    let t1 = Instant::now();
    let ab = train::ablation(&ablation_config, &pairs, |label| {
        eprintln!("variant {label} at {:.1}s", t1.elapsed().as_secs_f64());
    })
    .unwrap();
    println!("ablation(300 steps): {:.1} min", t1.elapsed().as_secs_f64() / 60.0);
    for v in &ab.variants {
        println!("  {:<12} final_loss {:.6} psnr {:.2}", v.label, v.final_loss, v.report.mean_psnr_db());
    }
    print!("{}", ab.table);
}
