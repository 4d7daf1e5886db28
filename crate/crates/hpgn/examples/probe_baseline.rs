//! Dry run of the ablation Baseline variant at the full training budget,
//! for comparing its final-step loss against the Full variant's.

use std::time::Instant;

use hpgn::config::TrainConfig;
use hpgn::data::ingest;
use hpgn::hif::HifMode;
use hpgn::synth;
use hpgn::train::train;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    synth::write_pairs(dir.path(), &synth::desk_pairs(4, 128, 7)).unwrap();
    let pairs = ingest(dir.path()).unwrap();
    let mut config = TrainConfig::default();
    config.model.hif_mode = HifMode::Off;
    let start = Instant::now();
    let outcome = train(&config, &pairs, None, |step, loss| {
        if step % 100 == 0 || step + 1 == config.steps {
            eprintln!("step {step}: loss {loss:.6} at {:.1}s", start.elapsed().as_secs_f64());
        }
    })
    .expect("training failed");
    let final_loss = outcome.losses.last().copied().unwrap();
    let n = outcome.losses.len().min(100);
    let tail: f64 = outcome.losses.iter().rev().take(n).sum::<f64>() / n as f64;
    eprintln!("baseline(2000): final_loss {final_loss:.6} tail100_mean {tail:.6}");
}
