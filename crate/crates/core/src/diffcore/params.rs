use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Ordered set of named parameters, each paired with a gradient accumulator
/// of identical shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        ensure!(!self.index.contains_key(&name), "duplicate parameter name {name:?}");
        ensure!(value.is_finite(), "parameter {name:?} has non-finite values");
        let grad = Tensor::zeros(value.shape());
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for e in &mut self.entries {
            e.grad.scale(k);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.grad.sum_sq()).sum::<f64>().sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (entry, g) in self.entries.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                entry.grad.add_assign(g);
            }
        }
    }

    /// Flat copy of every gradient, in entry order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data().iter().copied())
            .collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    pub(crate) fn entries_for_io(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }
}

/// Per-parameter gradient contributions from one backward pass.
///
/// Kept separate from [`ParamStore`] so several passes can run against a
/// shared read-only store and be summed afterwards in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    per_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(num_params: usize) -> Self {
        Gradients {
            per_param: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.per_param.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn add_to(&mut self, id: ParamId, shape: &[usize], delta: &[f64]) {
        let slot = &mut self.per_param[id.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
        for (a, b) in t.data_mut().iter_mut().zip(delta) {
            *a += b;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.per_param.iter_mut().zip(&other.per_param) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.per_param.iter_mut().flatten() {
            t.scale(k);
        }
    }

    /// Dense flat view in parameter order, zeros for untouched parameters.
    pub fn flatten(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::with_capacity(store.num_scalars());
        for id in store.ids() {
            match self.get(id) {
                Some(t) => out.extend_from_slice(t.data()),
                None => out.extend(std::iter::repeat_n(0.0, store.value(id).len())),
            }
        }
        out
    }
}
