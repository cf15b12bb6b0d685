use std::collections::BTreeMap;

use rand::Rng;

use crate::scalar::Scalar;

use super::tensor::Tensor;
use super::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub frozen: bool,
    /// Receives L2 weight decay in the optimizer.
    pub decay: bool,
}

/// Named, ordered parameter collection. Insertion order is the checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: BTreeMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>, decay: bool) -> Result<ParamId, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::Contract(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), value, frozen: false, decay });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Glorot-uniform initialized matrix `[fan_in × fan_out]`.
    pub fn insert_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<ParamId, TensorError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| S::lit(rng.random_range(-limit..limit))).collect();
        self.insert(name, Tensor::new(&[fan_in, fan_out], data)?, true)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.insert(name, Tensor::zeros(shape), false)
    }

    pub fn insert_ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.insert(name, Tensor::full(shape, S::one()), false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<S> {
        &mut self.entries[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| &self.entries[id.0].value)
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.entries.iter().enumerate().filter(move |(_, e)| e.name.starts_with(prefix)).map(|(i, _)| ParamId(i))
    }

    /// Sets the frozen flag of every parameter whose name starts with `prefix`.
    /// Returns how many were touched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.frozen = frozen;
            n += 1;
        }
        n
    }

    /// Moves every entry of `other` into `self`; names must not collide.
    pub fn merge(&mut self, other: ParamStore<S>) -> Result<(), TensorError> {
        for e in other.entries {
            let id = self.insert(&e.name, e.value, e.decay)?;
            self.entries[id.0].frozen = e.frozen;
        }
        Ok(())
    }

    /// Copy of the entries under `prefix`, as a standalone store.
    pub fn subset(&self, prefix: &str) -> ParamStore<S> {
        let mut out = ParamStore::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            let id = out.insert(&e.name, e.value.clone(), e.decay).expect("unique names");
            out.entries[id.0].frozen = e.frozen;
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`]; `None`
/// marks a parameter the loss never reached.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<S> {
    slots: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn for_store(store: &ParamStore<S>) -> Self {
        Self { slots: vec![None; store.len()] }
    }

    pub fn add(&mut self, id: ParamId, g: &[S]) {
        match &mut self.slots[id.0] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn merge(&mut self, other: &Grads<S>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        self.slots.iter_mut().flatten().flatten().for_each(|v| *v *= c);
    }

    pub fn get(&self, id: ParamId) -> Option<&[S]> {
        self.slots[id.0].as_deref()
    }

    pub fn global_norm(&self) -> S {
        self.slots.iter().flatten().flatten().map(|&v| v * v).sum::<S>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: S) {
        let n = self.global_norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }
}
