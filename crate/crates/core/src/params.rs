//! Named learnable arrays.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Index of an array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an array is initialized when declared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Mat,
    trainable: bool,
}

/// Ordered collection of named 2-D arrays.
///
/// Declaration order is the iteration order and the initialization order, so
/// a store built from the same declarations and seed is bit-identical.
/// Non-trainable entries (batch-norm running statistics) are carried along for
/// checkpointing but never receive gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a trainable array. Re-declaring a name is a programming error.
    pub fn declare(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        self.insert(name, initial_value(rows, cols, init, rng), true)
    }

    /// Declares a non-trainable buffer.
    pub fn declare_buffer(&mut self, name: &str, value: Mat) -> ParamId {
        self.insert(name, value, false)
    }

    fn insert(&mut self, name: &str, value: Mat, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(name), "parameter {name} declared twice");
        let id = ParamId(self.entries.len());
        self.entries.push(Entry { name: name.to_string(), value, trainable });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Result<&Mat> {
        Ok(self.get(self.id(name)?))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }

    /// Replaces an array's contents, checking the declared shape.
    pub fn set(&mut self, id: ParamId, value: Mat) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::Shape(format!("parameter {} expects shape {:?}, got {:?}", entry.name, entry.value.shape(), value.shape())));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("parameter {}", entry.name)));
        }
        entry.value = value;
        Ok(())
    }

    /// Copies every array of `other` whose name exists here. Shapes must agree
    /// and every declared name must be present in `other`.
    pub fn load_from(&mut self, other: &BTreeMap<String, Mat>) -> Result<()> {
        for i in 0..self.entries.len() {
            let name = self.entries[i].name.clone();
            let v = other.get(&name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            self.set(ParamId(i), v.clone())?;
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, Mat> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect()
    }
}

fn initial_value(rows: usize, cols: usize, init: Init, rng: &mut ChaCha8Rng) -> Mat {
    match init {
        Init::Zeros => Mat::zeros(rows, cols),
        Init::Ones => Mat::filled(rows, cols, 1.0),
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Mat::from_vec(rows, cols, data)
        }
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Self { slots: vec![None; store.len()] }
    }

    pub fn with_len(len: usize) -> Self {
        Self { slots: vec![None; len] }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        if id.0 >= self.slots.len() {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            *g = g.scale(s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.slots.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn declaration_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut s = ParamStore::new();
            s.declare("a", 2, 3, Init::FanIn(3), &mut rng);
            s.declare("b", 1, 3, Init::Zeros, &mut rng);
            s
        };
        let (x, y) = (build(), build());
        assert_eq!(x.to_map(), y.to_map());
        let a = x.by_name("a").unwrap();
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.as_slice().iter().all(|v| v.abs() <= bound));
        assert!(x.id("c").is_err());
    }

    #[test]
    fn set_rejects_wrong_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let id = s.declare("w", 2, 2, Init::Ones, &mut rng);
        assert!(s.set(id, Mat::zeros(3, 2)).is_err());
        assert!(s.set(id, Mat::filled(2, 2, f64::NAN)).is_err());
        s.set(id, Mat::zeros(2, 2)).unwrap();
    }
}
