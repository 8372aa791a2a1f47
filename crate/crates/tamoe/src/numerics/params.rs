//! Named parameter storage shared by the model and the optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`]. Stable for the store's life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// One trainable (or frozen) tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
    /// Matrix rows pinned to their initial value (the PAD embedding row).
    /// Gradients still flow through them; the optimizer skips the update.
    pub fixed_rows: Vec<usize>,
}

impl Parameter {
    fn new(value: Tensor, frozen: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            value,
            grad,
            frozen,
            fixed_rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    entries: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, frozen: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.names.push(name.to_string());
        self.entries.push(Parameter::new(value, frozen));
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    /// Add `delta` into the stored gradient; frozen parameters keep grad 0.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor) -> Result<()> {
        let name = self.names[id.0].clone();
        let p = &mut self.entries[id.0];
        if p.frozen {
            return Ok(());
        }
        if p.grad.shape() != delta.shape() {
            return Err(Error::Dim {
                op: "accumulate_grad",
                lhs: p.grad.shape().to_vec(),
                rhs: delta.shape().to_vec(),
            });
        }
        p.grad.add_in_place(delta);
        p.grad
            .ensure_finite(&format!("gradient of parameter '{name}'"))
    }

    pub fn scale_grads(&mut self, c: f64) {
        for p in &mut self.entries {
            if !p.frozen {
                p.grad.scale_in_place(c);
            }
        }
    }

    /// Global L2 norm over all non-frozen gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Total number of scalar entries across non-frozen parameters.
    pub fn trainable_len(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_and_lookup() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::zeros(vec![2, 2]), false);
        assert_eq!(store.id("w"), Some(id));
        assert_eq!(store.name(id), "w");
        assert_eq!(store.value(id).shape(), &[2, 2]);
    }

    #[test]
    fn frozen_grad_stays_zero() {
        let mut store = ParamStore::new();
        let id = store.insert("e", Tensor::zeros(vec![3]), true);
        store
            .accumulate_grad(id, &Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        assert_eq!(store.grad(id).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_norm_ignores_frozen() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::zeros(vec![1]), false);
        let b = store.insert("b", Tensor::zeros(vec![1]), true);
        store
            .accumulate_grad(a, &Tensor::from_vec(vec![1], vec![3.0]).unwrap())
            .unwrap();
        store
            .accumulate_grad(b, &Tensor::from_vec(vec![1], vec![4.0]).unwrap())
            .unwrap();
        assert!((store.grad_norm() - 3.0).abs() < 1e-12);
    }
}
