use std::collections::HashMap;
use std::sync::Arc;

use crate::tensor::Tensor;
use crate::{Result, TensorError};

/// An ordered collection of named tensors: every learnable parameter of a
/// model, addressable by name. Insertion order is the canonical iteration
/// order everywhere (optimizer sweeps, checkpoints, gradient checks).
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam {
                name: name.to_string(),
            });
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(Arc::new(tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Tensor>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    /// Mutable access; clones the backing buffer only if a graph still
    /// holds a reference to it.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(Arc::make_mut(&mut self.tensors[i]))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Tensor>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.tensors.iter())
    }

    /// Visit parameters mutably in insertion order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for i in 0..self.tensors.len() {
            f(&self.names[i], Arc::make_mut(&mut self.tensors[i]));
        }
    }

    /// Round every value to f32 precision so an f32 store round-trips
    /// bit-exactly.
    pub fn quantize_f32(&mut self) {
        self.for_each_mut(|_, t| t.quantize_f32());
    }
}
