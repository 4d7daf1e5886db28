//! Adam with bias-corrected first and second moments.
//!
//! Moment buffers are laid out in parameter registration order and allocated
//! on the first step. A non-finite gradient aborts the step before any state
//! changes, naming the parameter that produced it.

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::Scalar;

pub struct Adam<T: Scalar = f32> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Moment buffers for checkpointing; empty until the first step.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }

    /// Apply one update. `grads` must align with the store's registration
    /// order, as produced by `ParamStore::grads`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[&[T]]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for ((name, param), g) in store.iter().zip(grads) {
            if g.len() != param.numel() {
                return Err(Error::Dim(format!(
                    "gradient for {name:?} has {} values, parameter has {}",
                    g.len(),
                    param.numel()
                )));
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {name:?}"
                )));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let bc2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let nb1 = T::from_f64(1.0 - self.beta1);
        let nb2 = T::from_f64(1.0 - self.beta2);
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for (pi, ((_, param), g)) in store.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + nb1 * gj;
                v[j] = b2 * v[j] + nb2 * gj * gj;
                *p -= lr * (m[j] * bc1) / ((v[j] * bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
