//! Named parameters: the layout a model declares and the tensors that fill it.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub type ParamId = usize;

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal(0, std) truncated to ±2·std.
    TruncNormal(f64),
    Const(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Persistent state that is saved but never optimized (running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered declaration of every tensor a model owns.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    index: HashMap<String, ParamId>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.declare(name.into(), shape, init, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.declare(name.into(), shape, init, ParamKind::Buffer)
    }

    fn declare(&mut self, name: String, shape: &[usize], init: Init, kind: ParamKind) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter path {name}");
        assert!(shape.iter().all(|&d| d > 0), "empty parameter {name} {shape:?}");
        let id = self.specs.len();
        self.index.insert(name.clone(), id);
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), init, kind });
        id
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Element count over trainable entries.
    pub fn num_trainable(&self) -> u64 {
        self.specs
            .iter()
            .filter(|s| s.kind == ParamKind::Trainable)
            .map(|s| s.numel() as u64)
            .sum()
    }

    pub fn numel_of(&self, ids: &[ParamId]) -> u64 {
        ids.iter()
            .filter(|&&id| self.specs[id].kind == ParamKind::Trainable)
            .map(|&id| self.specs[id].numel() as u64)
            .sum()
    }

    /// Draws every tensor from its initializer with one seeded stream, in
    /// declaration order. Samples are drawn in 64-bit and then cast, so both
    /// precisions see the same values.
    pub fn materialize<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in &self.specs {
            let tensor = match spec.init {
                Init::Const(v) => Tensor::full(&spec.shape, T::of(v)),
                Init::TruncNormal(std) => {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    Tensor::from_fn(&spec.shape, |_| loop {
                        let v: f64 = normal.sample(&mut rng);
                        if v.abs() <= 2.0 * std {
                            break T::of(v);
                        }
                    })
                }
            };
            store.insert(spec.name.clone(), tensor).expect("layout names are unique");
        }
        store
    }

    /// Checks that `store` has exactly this layout's names and shapes, in order.
    pub fn validate<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        for (i, spec) in self.specs.iter().enumerate() {
            let Some((name, tensor)) = store.entries.get_index(i) else {
                return Err(Error::Mismatch(format!("missing tensor {}", spec.name)));
            };
            if *name != spec.name {
                return Err(Error::Mismatch(format!(
                    "tensor {i}: expected {}, found {name}",
                    spec.name
                )));
            }
            if tensor.shape() != spec.shape {
                return Err(Error::Mismatch(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    spec.shape,
                    tensor.shape()
                )));
            }
        }
        if store.len() > self.specs.len() {
            let (extra, _) = store.entries.get_index(self.specs.len()).expect("index in range");
            return Err(Error::Mismatch(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }
}

/// Ordered map from dotted parameter path to tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<T>) -> Result<()> {
        if self.entries.contains_key(&name) {
            return Err(Error::Format(format!("duplicate tensor name {name}")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn by_index(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id]
    }

    pub fn by_index_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over every entry, buffers included.
    pub fn total_elements(&self) -> u64 {
        self.entries.values().map(|t| t.len() as u64).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Binds a store's tensors onto a tape for one forward pass.
pub struct Bound<'t, T: Real> {
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    /// Trainable entries become differentiable leaves; buffers become constants.
    pub fn new(tape: &'t Tape<T>, layout: &ParamLayout, store: &ParamStore<T>) -> Self {
        let vars = layout
            .specs()
            .iter()
            .zip(store.entries.values())
            .map(|(spec, t)| match spec.kind {
                ParamKind::Trainable => tape.leaf(t.clone()),
                ParamKind::Buffer => tape.constant(t.clone()),
            })
            .collect();
        Self { vars }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ParamLayout {
        let mut l = ParamLayout::new();
        l.add("fc.weight", &[4, 5], Init::TruncNormal(INIT_STD));
        l.add("fc.bias", &[5], Init::Const(0.0));
        l.buffer("bn.running_var", &[3], Init::Const(1.0));
        l
    }

    #[test]
    fn linear_four_to_five_has_25_params() {
        assert_eq!(layout().num_trainable(), 25);
    }

    #[test]
    fn materialize_is_deterministic_and_truncated() {
        let l = layout();
        let a: ParamStore<f32> = l.materialize(7);
        let b: ParamStore<f32> = l.materialize(7);
        assert_eq!(a, b);
        let w = a.get("fc.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.04));
        assert_eq!(a.get("bn.running_var").unwrap().data(), &[1.0; 3]);
        let c: ParamStore<f64> = l.materialize(7);
        assert_eq!(c.cast::<f32>(), a);
    }

    #[test]
    fn validate_names_first_offending_tensor() {
        let l = layout();
        let mut store: ParamStore<f32> = ParamStore::new();
        store.insert("fc.weight".into(), Tensor::zeros(&[4, 5])).unwrap();
        store.insert("fc.bias".into(), Tensor::zeros(&[6])).unwrap();
        let err = l.validate(&store).unwrap_err().to_string();
        assert!(err.contains("fc.bias"), "{err}");
        assert!(store.insert("fc.bias".into(), Tensor::zeros(&[1])).is_err());
    }
}
