//! Named parameter storage, initialization, and per-step tape binding.
//!
//! Parameters live here between steps; every forward pass clones them onto a
//! fresh tape with `bind` (trainable) or `bind_frozen` (no gradients).
//! Registration order is stable and defines the layout of optimizer slots
//! and checkpoints.

use rand::Rng;

use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::{Scalar, Tensor};

pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

/// Tape handles for one binding of a store, in registration order.
pub struct Bound {
    entries: Vec<(String, Var)>,
}

impl Bound {
    /// Assemble a binding from vars already on a tape, e.g. to run a forward
    /// pass over leaves a gradient checker created itself.
    pub fn from_pairs(entries: Vec<(String, Var)>) -> Self {
        Bound { entries }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.try_var(name)
            .ok_or_else(|| Error::Contract(format!("no bound parameter named {name:?}")))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn register(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Contract(format!("parameter {name:?} registered twice")));
        }
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    /// Register weight (`<name>.w`) and optional bias (`<name>.b`) for a
    /// convolution, drawn from U(±sqrt(1/fan_in)) in row-major order, weight
    /// first. `c_in` counts channels per group.
    pub fn register_conv2d(
        &mut self,
        rng: &mut impl Rng,
        name: &str,
        c_out: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        with_bias: bool,
    ) -> Result<()> {
        let fan_in = c_in * kh * kw;
        let bound = (1.0 / fan_in as f64).sqrt();
        let w = draw_uniform(rng, vec![c_out, c_in, kh, kw], bound);
        self.register(&format!("{name}.w"), w)?;
        if with_bias {
            let b = draw_uniform(rng, vec![c_out], bound);
            self.register(&format!("{name}.b"), b)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel_total(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Overwrite one parameter's data, keeping its shape.
    pub fn set_data(&mut self, name: &str, data: &[T]) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name:?}")))?;
        if entry.1.numel() != data.len() {
            return Err(Error::Dim(format!(
                "parameter {name:?} holds {} values, got {}",
                entry.1.numel(),
                data.len()
            )));
        }
        entry.1.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Clone every parameter onto `tape` as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), tape.leaf(t.clone().with_grad())))
            .collect();
        Bound { entries }
    }

    /// Clone every parameter onto `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), tape.constant(t.clone())))
            .collect();
        Bound { entries }
    }

    /// Gradients for every parameter of a binding, in registration order.
    /// A parameter the loss never touched is a wiring bug and is reported.
    pub fn grads<'t>(&self, bound: &Bound, tape: &'t Tape<T>) -> Result<Vec<&'t [T]>> {
        self.entries
            .iter()
            .zip(&bound.entries)
            .map(|((name, _), &(_, var))| {
                tape.grad(var)
                    .ok_or_else(|| Error::Contract(format!("parameter {name:?} received no gradient")))
            })
            .collect()
    }
}

fn draw_uniform<T: Scalar>(rng: &mut impl Rng, shape: Vec<usize>, bound: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64(rng.gen::<f64>() * 2.0 * bound - bound))
        .collect();
    Tensor::new(shape, data).expect("shape/data constructed together")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.register("a", Tensor::zeros(vec![1])).unwrap();
        assert!(store.register("a", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn conv_init_is_seed_deterministic_and_bounded() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut store = ParamStore::<f32>::new();
            store.register_conv2d(&mut rng, "conv", 8, 4, 3, 3, true).unwrap();
            store
        };
        let (a, b) = (build(), build());
        let bound = (1.0f64 / (4.0 * 9.0)).sqrt() as f32;
        for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(ta.data(), tb.data());
            assert!(ta.data().iter().all(|v| v.abs() <= bound));
        }
        assert_eq!(a.get("conv.w").unwrap().shape(), &[8, 4, 3, 3]);
        assert_eq!(a.get("conv.b").unwrap().shape(), &[8]);
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let mut store = ParamStore::<f64>::new();
        store.register("used", Tensor::scalar(2.0)).unwrap();
        store.register("unused", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let used = bound.var("used").unwrap();
        let loss = tape.mul(used, used).unwrap();
        tape.backward(loss).unwrap();
        let err = store.grads(&bound, &tape).unwrap_err();
        assert!(err.to_string().contains("unused"), "{err}");
    }
}
