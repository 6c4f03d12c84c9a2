//! Named parameter storage and the per-step forward session.

use std::collections::HashMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor: either a trainable parameter or a buffer (running stats).
#[derive(Debug, Clone)]
pub struct Entry<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub trainable: bool,
}

/// Insertion-ordered collection of every tensor a model owns.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            grads: Vec::new(),
        }
    }

    fn insert(&mut self, name: String, value: Tensor<T>, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value: Arc::new(value),
            trainable,
        });
        self.grads.push(None);
        ParamId(id)
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.insert(name.into(), value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &Entry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.entries()
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.entries[id.0].value)
    }

    /// Mutable access; copies the tensor only if a live tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    /// Replace a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(TensorError::shape(
                "ParamStore::set",
                format!("{}: {:?} vs {:?}", e.name, e.value.shape(), value.shape()),
            ));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn accumulate_grad(&mut self, id: ParamId, g: Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Same names, same shapes.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.trainable == b.trainable && a.value.shape() == b.value.shape()
            })
    }
}

/// Scoped parameter registration used while constructing modules.
pub struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Child scope `prefix.name`.
    pub fn scope(&mut self, name: impl std::fmt::Display) -> Init<'_, T> {
        let prefix = self.full_name(&name.to_string());
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add_param(full, value)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add_buffer(full, value)
    }
}

/// One forward pass: binds parameters to tape leaves on first use.
pub struct Session<'t, 's, T: Scalar> {
    tape: &'t Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: HashMap<ParamId, Var<'t, T>>,
    train: bool,
    grad: bool,
}

impl<'t, 's, T: Scalar> Session<'t, 's, T> {
    /// `train` selects batch statistics in batch norm (and updates running
    /// stats); `grad` records parameters as differentiable leaves.
    pub fn new(tape: &'t Tape<T>, store: &'s mut ParamStore<T>, train: bool, grad: bool) -> Self {
        Self {
            tape,
            store,
            bound: HashMap::new(),
            train,
            grad,
        }
    }

    pub fn training(tape: &'t Tape<T>, store: &'s mut ParamStore<T>) -> Self {
        Self::new(tape, store, true, true)
    }

    /// Eval mode without gradient recording.
    pub fn inference(tape: &'t Tape<T>, store: &'s mut ParamStore<T>) -> Self {
        Self::new(tape, store, false, false)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var<'t, T> {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let trainable = self.store.entry(id).trainable;
        let v = self.tape.leaf_shared(self.store.shared(id), self.grad && trainable);
        self.bound.insert(id, v);
        v
    }

    pub fn input(&self, value: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(value)
    }

    /// Backpropagate `loss` and accumulate parameter gradients into the store.
    pub fn backward(self, loss: Var<'t, T>) -> Result<()> {
        let mut grads = self.tape.backward(loss)?;
        let mut bound: Vec<_> = self.bound.into_iter().collect();
        bound.sort_by_key(|(id, _)| *id);
        for (id, var) in bound {
            if let Some(g) = grads.take(var) {
                self.store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }
}
