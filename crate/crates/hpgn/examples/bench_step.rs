use std::time::Instant;
fn main() {
    use hpgn::config::TrainConfig;
    use hpgn::synth;
    use hpgn::data::ingest;
    let dir = tempfile::tempdir().unwrap();
    synth::write_pairs(dir.path(), &synth::desk_pairs(4, 128, 7)).unwrap();
    let pairs = ingest(dir.path()).unwrap();
    let mut config = TrainConfig::default();
    config.steps = 6;
    let t0 = Instant::now();
    let mut marks = Vec::new();
    hpgn::train::train(&config, &pairs, None, |step, loss| {
        marks.push((step, loss, t0.elapsed().as_secs_f64()));
    }).unwrap();
    for (s, l, t) in &marks {
        println!("step {s}: loss {l:.6} at {t:.2}s");
    }
    let warm = marks.last().unwrap().2 - marks[0].2;
    println!("steady-state: {:.3} s/step -> 2000 steps ~ {:.1} min", warm / (marks.len() - 1) as f64, warm / (marks.len() - 1) as f64 * 2000.0 / 60.0);
}
