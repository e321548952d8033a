//! Named, trainable parameters and their deterministic initialization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn new(index: usize) -> Self {
        Self(index)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub grad: Tensor<T>,
}

/// All parameters of a model, addressable by id or by dotted name.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Real> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    seed: u64,
    grads_ready: bool,
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            seed,
            grads_ready: false,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(tensor.shape())?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, tensor, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Parameter ids ordered lexicographically by name.
    pub fn sorted_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = (0..self.params.len()).map(ParamId).collect();
        ids.sort_by(|a, b| self.params[a.0].name.cmp(&self.params[b.0].name));
        ids
    }

    /// Overwrites every gradient with `∂loss/∂param`; parameters the loss did not reach get zero.
    pub fn set_grads(&mut self, grads: &Gradients<T>) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
        for (id, g) in grads.params() {
            if let Some(g) = g {
                self.params[id.0].grad.data_mut().copy_from_slice(g.data());
            }
        }
        self.grads_ready = true;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn consume_grads(&mut self) -> Result<()> {
        if !self.grads_ready {
            return Err(Error::MissingGradients);
        }
        self.grads_ready = false;
        Ok(())
    }

    /// Overwrites every parameter value with zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.tensor.data_mut().fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            index: self.index.clone(),
            seed: self.seed,
            grads_ready: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(1/fan_in)` from a seeded SplitMix64 stream.
    Uniform,
    /// Every parameter starts at zero.
    Zeros,
}

/// Allocates parameters under a dotted name prefix.
pub struct ParamBuilder<'s, T: Real> {
    store: &'s mut ParamStore<T>,
    rng: SplitMix64,
    init: Init,
    prefix: String,
}

impl<'s, T: Real> ParamBuilder<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, init: Init) -> Self {
        let rng = SplitMix64::seed_from_u64(store.seed());
        Self {
            store,
            rng,
            init,
            prefix: String::new(),
        }
    }

    /// Runs `f` with `segment` appended to the name prefix.
    pub fn scope<R>(&mut self, segment: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        let saved = self.prefix.len();
        if !self.prefix.is_empty() {
            self.prefix.push('.');
        }
        self.prefix.push_str(segment);
        let out = f(self);
        self.prefix.truncate(saved);
        out
    }

    fn full_name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
        match self.init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Uniform => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                let rng = &mut self.rng;
                Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
            }
        }
    }

    /// Weight whose fan-in is the product of all but the leading extent.
    pub fn weight(&mut self, leaf: &str, shape: &[usize]) -> Result<ParamId> {
        let fan_in = shape[1..].iter().product();
        let t = self.uniform(shape, fan_in)?;
        let name = self.full_name(leaf);
        self.store.insert(name, t)
    }

    pub fn bias(&mut self, leaf: &str, len: usize, fan_in: usize) -> Result<ParamId> {
        let t = self.uniform(&[len], fan_in)?;
        let name = self.full_name(leaf);
        self.store.insert(name, t)
    }

    /// A learnable scalar with a fixed starting value, independent of `Init`.
    pub fn scalar(&mut self, leaf: &str, value: f64) -> Result<ParamId> {
        let name = self.full_name(leaf);
        self.store.insert(name, Tensor::scalar(T::from_f64(value)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_scoped() {
        let mut store = ParamStore::<f32>::new(3);
        let mut b = ParamBuilder::new(&mut store, Init::Uniform);
        b.scope("sha", |b| {
            b.scope("reduce", |b| b.weight("weight", &[4, 8, 1, 1]))?;
            b.scope("reduce", |b| b.weight("weight", &[4, 8, 1, 1]))
        })
        .unwrap_err();
        assert!(store.id("sha.reduce.weight").is_some());
    }

    #[test]
    fn uniform_init_is_bounded_and_seeded() {
        let build = |seed| {
            let mut store = ParamStore::<f64>::new(seed);
            let mut b = ParamBuilder::new(&mut store, Init::Uniform);
            b.weight("w", &[8, 4, 3, 3]).unwrap();
            store
        };
        let a = build(11);
        let bound = (1.0f64 / 36.0).sqrt();
        let w = a.tensor(ParamId(0));
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(w, build(11).tensor(ParamId(0)));
        assert_ne!(w, build(12).tensor(ParamId(0)));
    }
}
