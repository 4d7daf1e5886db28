//! Illumination prior, brightness estimation, and the light-up image.
//!
//! The prior is the per-pixel channel mean of the compressed input. A small
//! estimator (1×1 embed, depthwise 5×5, two 1×1 heads; no hidden
//! activations) maps the input plus prior to illumination features and a
//! strictly positive brightness map; multiplying brightness into the input
//! yields the coarse light-up image the enhancer refines.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net;
use crate::tensor::conv::ConvSpec;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Bound, ParamStore, Scalar};

/// Per-pixel channel mean of an N×3×H×W tensor, N×1×H×W in [0,1].
pub fn illum_prior<T: Scalar>(tape: &mut Tape<T>, i_comp: Var) -> Result<Var> {
    let (_, c, _, _) = tape.value(i_comp).dims4()?;
    if c != 3 {
        return Err(Error::Dim(format!(
            "illumination prior expects 3 channels, got {c}"
        )));
    }
    tape.channel_mean(i_comp)
}

/// Brightness map I_bri (N×3×H×W, strictly positive) and illumination
/// features F_illum (N×C×H×W).
pub struct IlluminationOutputs {
    pub features: Var,
    pub brightness: Option<Var>,
}

/// The illumination estimator. Layer stack and feature width are
/// configurable substitutes for choices the source design leaves open.
pub struct Estimator {
    channels: usize,
    brightness_head: bool,
}

impl Estimator {
    /// Register parameters under the `illum.` prefix. `brightness_head`
    /// controls whether the I_bri branch exists (the trunk may be configured
    /// to consume the raw input instead, leaving the branch untrained).
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        channels: usize,
        brightness_head: bool,
    ) -> Result<Self> {
        store.register_conv2d(rng, "illum.embed", channels, 4, 1, 1, true)?;
        // depthwise: one 5x5 filter per channel
        store.register_conv2d(rng, "illum.dw", channels, 1, 5, 5, true)?;
        store.register_conv2d(rng, "illum.fea", channels, channels, 1, 1, true)?;
        if brightness_head {
            store.register_conv2d(rng, "illum.bri", 3, channels, 1, 1, true)?;
        }
        Ok(Estimator { channels, brightness_head })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Concatenate input and prior, embed, and run both heads.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        i_comp: Var,
        prior: Var,
    ) -> Result<IlluminationOutputs> {
        let stacked = tape.concat(&[i_comp, prior])?;
        let embedded = net::conv(tape, bound, "illum.embed", stacked, net::pointwise())?;
        let dw_spec = ConvSpec { stride: 1, padding: 2, groups: self.channels };
        let mixed = net::conv(tape, bound, "illum.dw", embedded, dw_spec)?;
        let features = net::conv(tape, bound, "illum.fea", mixed, net::pointwise())?;
        let brightness = if self.brightness_head {
            let raw = net::conv(tape, bound, "illum.bri", mixed, net::pointwise())?;
            Some(tape.softplus(raw)?)
        } else {
            None
        };
        Ok(IlluminationOutputs { features, brightness })
    }
}

/// I_light_up = I_bri ⊙ I_comp. Shapes must match exactly; broadcasting here
/// would hide wiring mistakes.
pub fn light_up<T: Scalar>(tape: &mut Tape<T>, i_bri: Var, i_comp: Var) -> Result<Var> {
    if tape.value(i_bri).shape() != tape.value(i_comp).shape() {
        return Err(Error::Dim(format!(
            "light-up shapes differ: {:?} vs {:?}",
            tape.value(i_bri).shape(),
            tape.value(i_comp).shape()
        )));
    }
    tape.mul(i_bri, i_comp)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::tensor::Tensor;

    use super::*;

    fn pseudo(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        let data = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn prior_is_the_exact_channel_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64s(vec![1, 3, 1, 1], &[0.2, 0.4, 0.6]).unwrap());
        let p = illum_prior(&mut tape, x).unwrap();
        assert_eq!(tape.value(p).data()[0], (0.2 + 0.4 + 0.6) / 3.0);

        let mut tape = Tape::<f64>::new();
        let black = tape.leaf(Tensor::zeros(vec![2, 3, 4, 4]));
        let p = illum_prior(&mut tape, black).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prior_rejects_non_rgb() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 4, 4, 4]));
        assert!(illum_prior(&mut tape, x).is_err());
    }

    fn build(seed: u64, c: usize) -> (ParamStore<f64>, Estimator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let est = Estimator::register(&mut store, &mut rng, c, true).unwrap();
        (store, est)
    }

    #[test]
    fn estimator_output_shapes() {
        let (store, est) = build(1, 8);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.leaf(pseudo(vec![2, 3, 12, 10], 5));
        let prior = illum_prior(&mut tape, x).unwrap();
        let out = est.forward(&mut tape, &bound, x, prior).unwrap();
        assert_eq!(tape.value(out.features).shape(), &[2, 8, 12, 10]);
        let bri = out.brightness.unwrap();
        assert_eq!(tape.value(bri).shape(), &[2, 3, 12, 10]);
        assert!(tape.value(bri).data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zeroed_brightness_head_gives_ln_two() {
        let (mut store, est) = build(2, 8);
        for name in ["illum.bri.w", "illum.bri.b"] {
            let n = store.get(name).unwrap().numel();
            store.set_data(name, &vec![0.0; n]).unwrap();
        }
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.leaf(pseudo(vec![1, 3, 8, 8], 9));
        let prior = illum_prior(&mut tape, x).unwrap();
        let out = est.forward(&mut tape, &bound, x, prior).unwrap();
        let ln2 = 2.0f64.ln();
        for &v in tape.value(out.brightness.unwrap()).data() {
            assert!((v - ln2).abs() < 1e-12, "{v} vs ln 2");
        }
    }

    #[test]
    fn estimator_is_shift_equivariant_inside_borders() {
        let (store, est) = build(3, 8);
        let x = pseudo(vec![1, 3, 12, 12], 11);
        // x2 = x shifted one pixel right (column 0 duplicated).
        let mut x2 = x.clone();
        {
            let (w, src) = (12usize, x.data().to_vec());
            let dst = x2.data_mut();
            for row in 0..3 * 12 {
                for col in (1..w).rev() {
                    dst[row * w + col] = src[row * w + col - 1];
                }
            }
        }
        let run = |input: Tensor<f64>| {
            let mut tape = Tape::new();
            let bound = store.bind_frozen(&mut tape);
            let v = tape.leaf(input);
            let prior = illum_prior(&mut tape, v).unwrap();
            let out = est.forward(&mut tape, &bound, v, prior).unwrap();
            tape.value(out.features).clone()
        };
        let (a, b) = (run(x), run(x2));
        // Interior columns (3..9) avoid the 5x5 kernel's border support.
        for c in 0..8 {
            for y in 0..12 {
                for col in 3..9 {
                    let va = a.at(&[0, c, y, col]);
                    let vb = b.at(&[0, c, y, col + 1]);
                    assert_eq!(va, vb, "channel {c} row {y} col {col}");
                }
            }
        }
    }

    #[test]
    fn light_up_identity_and_annihilator() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(pseudo(vec![1, 3, 6, 6], 13));
        let ones = tape.leaf(Tensor::ones(vec![1, 3, 6, 6]));
        let out = light_up(&mut tape, ones, x).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(x).data());

        let zeros = tape.leaf(Tensor::zeros(vec![1, 3, 6, 6]));
        let out = light_up(&mut tape, x, zeros).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn light_up_rejects_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(vec![1, 3, 6, 6]));
        let b = tape.leaf(Tensor::zeros(vec![1, 3, 6, 7]));
        assert!(light_up(&mut tape, a, b).is_err());
    }

    #[test]
    fn brightness_gradients_match_finite_differences() {
        let (store, est) = build(4, 4);
        let x = pseudo(vec![1, 3, 8, 8], 17);
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        let tensors: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
        let mut inputs = vec![x];
        inputs.extend(tensors);
        let worst = crate::tensor::gradcheck::check_gradients(
            &inputs,
            |tape, vars| {
                let bound = Bound::from_pairs(
                    names.iter().cloned().zip(vars[1..].iter().copied()).collect(),
                );
                let prior = illum_prior(tape, vars[0])?;
                let out = est.forward(tape, &bound, vars[0], prior)?;
                tape.mean_all(out.brightness.expect("head enabled"))
            },
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(worst <= 1e-6, "worst gap {worst}");
    }
}
