use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Uniform};

use super::{Scalar, Tensor};
use crate::error::{bail_shape, bail_validation, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Vec<S>,
    /// Buffers (batch-norm running statistics) are stored but not trained.
    pub trainable: bool,
}

/// Named parameters and buffers of a model, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn push(&mut self, name: String, value: Tensor<S>, trainable: bool) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let grad = vec![S::zero(); value.len()];
        self.entries.push(ParamEntry { name, value, grad, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.push(name.into(), value, false)
    }

    /// Uniform(−bound, bound) initialisation with `bound = 1/√fan_in`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Rng) -> ParamId {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::lit(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, data).expect("shape product"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.entries[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Trainable scalars in entries whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.name.starts_with(prefix))
            .map(|e| e.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Global L2 norm of trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self
            .entries
            .iter()
            .filter(|e| e.trainable)
            .flat_map(|e| e.grad.iter())
            .map(|g| {
                let v = g.f64();
                v * v
            })
            .sum();
        libm::sqrt(sq)
    }

    /// Scales gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = S::lit(max_norm / (norm + 1e-6));
            for e in self.entries.iter_mut().filter(|e| e.trainable) {
                e.grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    /// Flat copy of every value (parameters and buffers) in store order.
    pub fn snapshot(&self) -> Vec<Tensor<S>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn load_snapshot(&mut self, values: &[Tensor<S>]) -> Result<()> {
        if values.len() != self.entries.len() {
            bail_validation!("snapshot has {} tensors, store has {}", values.len(), self.entries.len());
        }
        for (e, v) in self.entries.iter().zip(values) {
            if e.value.shape != v.shape {
                bail_shape!("{}: snapshot shape {:?} != {:?}", e.name, v.shape, e.value.shape);
            }
        }
        for (e, v) in self.entries.iter_mut().zip(values) {
            e.value.data.copy_from_slice(&v.data);
        }
        Ok(())
    }
}
