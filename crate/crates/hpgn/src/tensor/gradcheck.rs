//! Central finite-difference verification of tape gradients.
//!
//! `check_gradients` rebuilds the same graph many times with one input
//! element nudged by ±eps, so it is only for small test tensors. The gap is
//! measured relative to the larger gradient magnitude, floored at 1, which
//! keeps off-path zeros from tripping the tolerance; callers should scale
//! their test functions so interesting gradients are O(1).

use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::Tensor;

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compare tape gradients of `build`'s scalar output against central
/// differences for every element of every input. Returns the worst gap, or
/// an error naming the offending element when it exceeds `tol`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F, eps: f64, tol: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar output, got {:?}",
            tape.value(loss).shape()
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let base = input.data()[j];
            work[ti].data_mut()[j] = base + eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = base - eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = base;
            let numeric = (plus - minus) / (2.0 * eps);
            let gap = rel_gap(analytic[ti][j], numeric);
            if gap > tol {
                return Err(Error::Numeric(format!(
                    "gradient mismatch at input {ti} element {j}: tape {} vs finite diff {numeric} (gap {gap:.3e}, tol {tol:.1e})",
                    analytic[ti][j]
                )));
            }
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_on_composite_graph() {
        let x = Tensor::from_f64s(vec![2, 3], &[0.3, -0.7, 1.2, 0.05, -1.4, 0.9]).unwrap();
        let s = Tensor::from_f64s(vec![2, 1], &[0.6, -0.2]).unwrap();
        let worst = check_gradients(
            &[x, s],
            |tape, v| {
                let scaled = tape.mul(v[0], v[1])?;
                let act = tape.sigmoid(scaled)?;
                tape.mean_all(act)
            },
            1e-4,
            1e-7,
        )
        .unwrap();
        assert!(worst < 1e-7, "worst gap {worst}");
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::from_f64s(vec![2], &[1.0, 2.0]).unwrap();
        let err = check_gradients(&[x], |tape, v| tape.mul(v[0], v[0]), 1e-4, 1e-6);
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
