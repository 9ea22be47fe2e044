//! Named learnable parameters with accumulated gradients.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Gradients, Tape};
use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
struct Param {
    value: Arc<Tensor>,
    grad: Tensor,
}

/// Parameter tensors keyed by unique name, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            seed,
        }
    }

    /// Seed the store was initialised from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        if self.entries.contains_key(name) {
            return Err(TensorError::Internal(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(
            name.to_string(),
            Param {
                value: Arc::new(value),
                grad,
            },
        );
        Ok(())
    }

    /// Weight matrix drawn from U(−1/√fan_in, 1/√fan_in), where fan_in is the
    /// row count (weights act on row vectors: `y = x·W`).
    pub fn insert_uniform<R: Rng>(
        &mut self,
        rng: &mut R,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<(), TensorError> {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<(), TensorError> {
        self.insert(name, Tensor::zeros(&[rows, cols]))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| p.value.as_ref())
    }

    pub(crate) fn shared(&self, name: &str) -> Option<Arc<Tensor>> {
        self.entries.get(name).map(|p| Arc::clone(&p.value))
    }

    /// Mutable access to a value; copies it first if a tape still shares it.
    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| Arc::make_mut(&mut p.value))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_param",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), p.value.as_ref()))
    }

    /// Values and gradients together, for optimisers.
    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &Tensor)> {
        self.entries
            .iter_mut()
            .map(|(k, p)| (k.as_str(), Arc::make_mut(&mut p.value), &p.grad))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `grad` into the accumulated gradient of `name`.
    pub fn add_grad(&mut self, name: &str, grad: &Tensor) -> Result<(), TensorError> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if p.grad.shape() != grad.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add_grad",
                left: p.grad.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    /// Adds the gradients of every parameter bound on `tape`. Repeated calls
    /// accumulate; parameters the loss does not reach are left untouched.
    pub fn accumulate_grads(&mut self, tape: &Tape, grads: &Gradients) -> Result<(), TensorError> {
        for (name, var) in tape.bound_params() {
            if let Some(g) = grads.get(*var) {
                self.add_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Multiplies every accumulated gradient by `s`.
    pub fn scale_grads(&mut self, s: f64) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
}
