use std::time::Instant;
use hpgn::tensor::{ConvSpec, Tensor};

fn bench(label: &str, n: usize, ci: usize, co: usize, hw: usize, k: usize, pad: usize) {
    let x = Tensor::<f32>::new(vec![n, ci, hw, hw], (0..n*ci*hw*hw).map(|i| (i % 97) as f32 * 0.01).collect()).unwrap();
    let w = Tensor::<f32>::new(vec![co, ci, k, k], (0..co*ci*k*k).map(|i| (i % 53) as f32 * 0.01 - 0.2).collect()).unwrap();
    let b = Tensor::<f32>::new(vec![co], vec![0.1; co]).unwrap();
    let spec = ConvSpec { stride: 1, padding: pad, groups: 1 };
    let reps = 20;

    let t0 = Instant::now();
    let mut out = None;
    for _ in 0..reps { out = Some(hpgn::tensor::conv2d_forward(&x, &w, Some(&b), spec).unwrap()); }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;
    let out = out.unwrap();

    let g: Vec<f32> = out.data().iter().map(|v| v * 0.5 + 0.1).collect();
    let mut dx = vec![0.0f32; x.numel()];
    let mut dw = vec![0.0f32; w.numel()];
    let mut db = vec![0.0f32; co];

    let t1 = Instant::now();
    for _ in 0..reps { hpgn::tensor::conv2d_backward(&x, &w, spec, &g, Some(&mut dx), None, None).unwrap(); }
    let bx = t1.elapsed().as_secs_f64() / reps as f64;
    let t2 = Instant::now();
    for _ in 0..reps { hpgn::tensor::conv2d_backward(&x, &w, spec, &g, None, Some(&mut dw), None).unwrap(); }
    let bw = t2.elapsed().as_secs_f64() / reps as f64;
    let t3 = Instant::now();
    for _ in 0..reps { hpgn::tensor::conv2d_backward(&x, &w, spec, &g, None, None, Some(&mut db)).unwrap(); }
    let bb = t3.elapsed().as_secs_f64() / reps as f64;
    println!("{label}: fwd {:.2}ms  dx {:.2}ms  dw {:.2}ms  db {:.2}ms  (bwd/fwd {:.2})",
        fwd*1e3, bx*1e3, bw*1e3, bb*1e3, (bx+bw+bb)/fwd);
}

fn main() {
    bench("3x3 32->32 @64^2 n4", 4, 32, 32, 64, 3, 1);
    bench("3x3 32->32 @32^2 n4", 4, 32, 32, 32, 3, 1);
    bench("1x1 32->32 @64^2 n4", 4, 32, 32, 64, 1, 0);
    bench("3x3  3->32 @64^2 n4", 4, 3, 32, 64, 3, 1);
    bench("3x3 64->1  @64^2 n4", 4, 64, 1, 64, 3, 1);
}
