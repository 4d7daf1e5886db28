use std::time::Instant;
use hpgn::config::TrainConfig;
use hpgn::data::{ingest, make_example};
use hpgn::img::batch_to_tensor;
use hpgn::loss::{total_loss, PerceptualExtractor};
use hpgn::synth;
use hpgn::tensor::Tape;
use hpgn::train::build_model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    synth::write_pairs(dir.path(), &synth::desk_pairs(4, 128, 7)).unwrap();
    let pairs = ingest(dir.path()).unwrap();
    let config = TrainConfig::default();
    let (store, model) = build_model(&config).unwrap();
    let extractor = PerceptualExtractor::new(config.perceptual_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    rng.set_stream(1);

    let mut t_data = 0.0;
    let mut t_fwd = 0.0;
    let mut t_loss = 0.0;
    let mut t_bwd = 0.0;
    let mut t_grads = 0.0;
    let reps = 6;
    for _ in 0..reps {
        let t0 = Instant::now();
        let mut comps = Vec::new();
        let mut highs = Vec::new();
        let mut qfs = Vec::new();
        let mut qms = Vec::new();
        for i in 0..config.batch {
            let ex = make_example(&pairs[i % pairs.len()], &mut rng, config.crop, config.qf_mode, config.flip).unwrap();
            qfs.push(ex.qf); qms.push(ex.qm); comps.push(ex.i_comp); highs.push(ex.i_high);
        }
        let i_comp = batch_to_tensor::<f32>(&comps).unwrap();
        let i_high = batch_to_tensor::<f32>(&highs).unwrap();
        t_data += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.constant(i_comp);
        let target = tape.constant(i_high);
        let out = model.forward(&mut tape, &bound, x, &qfs, &qms).unwrap();
        t_fwd += t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let loss = total_loss(&mut tape, out.i_en, target, &config.loss, Some(&extractor)).unwrap();
        t_loss += t2.elapsed().as_secs_f64();

        let t3 = Instant::now();
        tape.backward(loss).unwrap();
        t_bwd += t3.elapsed().as_secs_f64();

        let t4 = Instant::now();
        let _ = store.grads(&bound, &tape).unwrap();
        t_grads += t4.elapsed().as_secs_f64();
    }
    let r = reps as f64;
    println!("data  {:.3}s", t_data / r);
    println!("fwd   {:.3}s", t_fwd / r);
    println!("loss  {:.3}s", t_loss / r);
    println!("bwd   {:.3}s", t_bwd / r);
    println!("grads {:.3}s", t_grads / r);
    println!("total {:.3}s", (t_data + t_fwd + t_loss + t_bwd + t_grads) / r);
}
