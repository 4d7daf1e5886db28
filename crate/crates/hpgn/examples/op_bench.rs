use std::time::Instant;
use hpgn::tensor::{Tape, Tensor};

fn t(shape: Vec<usize>) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|i| (i % 83) as f32 * 0.01 + 0.05).collect()).unwrap()
}

fn bench(label: &str, mut f: impl FnMut()) {
    let reps = 30;
    let t0 = Instant::now();
    for _ in 0..reps { f(); }
    println!("{label}: {:.3}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

fn main() {
    let big = t(vec![4, 32, 64, 64]);
    let half = t(vec![4, 32, 32, 32]);

    bench("up2   32ch 32->64", || {
        let mut tape = Tape::new();
        let x = tape.leaf(half.clone().with_grad());
        let y = tape.up2(x).unwrap();
        let loss = tape.mean_all(y).unwrap();
        tape.backward(loss).unwrap();
    });
    bench("down2 32ch 64->32", || {
        let mut tape = Tape::new();
        let x = tape.leaf(big.clone().with_grad());
        let y = tape.down2(x).unwrap();
        let loss = tape.mean_all(y).unwrap();
        tape.backward(loss).unwrap();
    });
    bench("leaky 4x32x64x64 ", || {
        let mut tape = Tape::new();
        let x = tape.leaf(big.clone().with_grad());
        let y = tape.leaky_relu(x, 0.2).unwrap();
        let loss = tape.mean_all(y).unwrap();
        tape.backward(loss).unwrap();
    });
    bench("mul   4x32x64x64 ", || {
        let mut tape = Tape::new();
        let x = tape.leaf(big.clone().with_grad());
        let y = tape.leaf(big.clone().with_grad());
        let z = tape.mul(x, y).unwrap();
        let loss = tape.mean_all(z).unwrap();
        tape.backward(loss).unwrap();
    });
    bench("concat 3x(4x32.. )", || {
        let mut tape = Tape::new();
        let a = tape.leaf(big.clone().with_grad());
        let b = tape.leaf(big.clone().with_grad());
        let c = tape.leaf(big.clone().with_grad());
        let abc = tape.concat(&[a, b, c]).unwrap();
        let loss = tape.mean_all(abc).unwrap();
        tape.backward(loss).unwrap();
    });
    bench("broadcast 1x1->64x64", || {
        let mut tape = Tape::new();
        let w = tape.leaf(t(vec![4, 32, 1, 1]).with_grad());
        let y = tape.broadcast_to(w, &[4, 32, 64, 64]).unwrap();
        let loss = tape.mean_all(y).unwrap();
        tape.backward(loss).unwrap();
    });
}
