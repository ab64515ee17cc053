//! Named parameter store shared by every network component.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    name: String,
    value: Rc<Tensor<T>>,
    trainable: bool,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor<T>> {
        self.value.clone()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Ordered collection of named tensors. Trainable entries carry a gradient
/// slot; buffers (batch-norm running statistics) do not.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, t: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let t = if trainable { t.with_grad() } else { t };
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Rc::new(t),
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add(&mut self, name: &str, t: Tensor<T>) -> Result<ParamId> {
        self.insert(name, t, true)
    }

    pub fn add_buffer(&mut self, name: &str, t: Tensor<T>) -> Result<ParamId> {
        self.insert(name, t, false)
    }

    /// Uniform ±1/sqrt(fan_in) initialisation.
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(-bound..bound)));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    /// Mutable access; clones the tensor if a live graph still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn set(&mut self, id: ParamId, t: Tensor<T>) -> Result<()> {
        let cur = self.get(id);
        if cur.shape() != t.shape() {
            return Err(Error::Mismatch(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.entries[id.0].name,
                cur.shape(),
                t.shape()
            )));
        }
        let trainable = self.entries[id.0].trainable;
        self.entries[id.0].value = Rc::new(if trainable { t.with_grad() } else { t });
        Ok(())
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, t) in updates {
            let dst = self.get_mut(id);
            debug_assert_eq!(dst.shape(), t.shape());
            dst.data_mut().copy_from_slice(t.data());
        }
    }

    /// Add a backward pass' parameter gradients into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            if self.entries[id.0].trainable {
                self.get_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for i in 0..self.entries.len() {
            if self.entries[i].trainable {
                Rc::make_mut(&mut self.entries[i].value).zero_grad();
            }
        }
    }

    /// Zero every trainable tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for i in 0..self.entries.len() {
            if self.entries[i].trainable && self.entries[i].name.starts_with(prefix) {
                let t = Rc::make_mut(&mut self.entries[i].value);
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}
