//! Named parameter storage and gradients keyed by parameter.

use std::collections::HashMap;

use ndarray::Array2;

use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of named tensors. Shapes are fixed at creation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter {name}")));
        }
        self.params.push(Param { name: name.to_string(), value, trainable });
        self.index.insert(name.to_string(), self.params.len() - 1);
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name)
            .map(|i| &self.params[i].value)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?;
        if self.params[i].value.dim() != value.dim() {
            return Err(Error::InvalidConfig(format!(
                "parameter {name} has shape {:?}, got {:?}",
                self.params[i].value.dim(),
                value.dim()
            )));
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn entry(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records the parameter as a named leaf on the tape.
    pub fn load(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let i = self.index_of(name).ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?;
        let p = &self.params[i];
        Ok(if p.trainable { tape.param(name, p.value.clone()) } else { tape.constant(p.value.clone()) })
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Array2::zeros(p.value.dim())).collect()
    }
}

/// Gradients aligned with the entries of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Gradients { grads: store.zeros_like() }
    }

    pub fn get<'a>(&'a self, store: &ParamStore, name: &str) -> Option<&'a Tensor> {
        store.index_of(name).map(|i| &self.grads[i])
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Rescales to global norm `max_norm` if larger; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            let f = max_norm / n;
            for g in &mut self.grads {
                g.mapv_inplace(|x| x * f);
            }
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Gradient of the scalar `objective` with respect to every parameter of
/// `store`; parameters absent from the tape get exact zeros.
pub fn grad(tape: &Tape, objective: Var, store: &ParamStore) -> Result<Gradients> {
    let slots = tape.backward(objective)?;
    let mut out = Gradients::zeros(store);
    for (name, var) in tape.params() {
        let Some(i) = store.index_of(name) else { continue };
        if let Some(g) = &slots[var.0] {
            if g.dim() != out.grads[i].dim() {
                return Err(Error::InvalidConfig(format!("gradient shape mismatch for {name}")));
            }
            out.grads[i] += g;
        }
    }
    Ok(out)
}
