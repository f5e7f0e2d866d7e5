use indexmap::IndexMap;

use crate::{Result, Scalar, Tensor, TensorError};

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<S> {
    tensors: IndexMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<usize> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let (idx, _) = self.tensors.insert_full(name, tensor.with_requires_grad(true));
        Ok(idx)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.tensors.get_mut(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.tensors.get_index_of(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn by_index(&self, idx: usize) -> (&str, &Tensor<S>) {
        let (k, v) = self.tensors.get_index(idx).expect("parameter index out of range");
        (k.as_str(), v)
    }

    pub fn by_index_mut(&mut self, idx: usize) -> (&str, &mut Tensor<S>) {
        let (k, v) = self.tensors.get_index_mut(idx).expect("parameter index out of range");
        (k.as_str(), v)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    /// Total number of scalar values across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Sets every gradient buffer to zeros.
    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(|t| t.zero_grad());
    }

    /// Removes every gradient buffer.
    pub fn clear_grad(&mut self) {
        self.tensors.values_mut().for_each(|t| t.clear_grad());
    }

    /// Moves all tensors of `other` into `self`, prefixing their names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet<S>) -> Result<()> {
        for (name, t) in other.tensors {
            self.insert(format!("{prefix}{name}"), t)?;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Global L2 norm of all gradients (missing buffers count as zero).
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .values()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so that their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = S::from_f64(max_norm / norm);
            for t in self.tensors.values_mut() {
                if let Some(g) = t.grad_mut_opt().as_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }
}
