use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{DpiError, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named collection of trainable tensors and their accumulated gradients.
///
/// The set name routes gradients from a [`super::Graph`] back to the right
/// collection, so two sets used in one graph must have distinct names.
#[derive(Debug, Clone)]
pub struct ParamSet {
    name: String,
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

/// Serializable parameter values (gradients are not persisted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub name: String,
    pub entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(name: impl Into<String>) -> Self {
        ParamSet {
            name: name.into(),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(DpiError::config(format!(
                "duplicate parameter `{name}` in set `{}`",
                self.name
            )));
        }
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Adds a tensor initialised uniformly in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.random_range(-limit..limit);
        }
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Adds the gradients computed for this set (matched by set name).
    /// Repeated calls accumulate.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for pg in grads.params().filter(|p| p.set == self.name) {
            let slot = self.grads.get_mut(pg.id.0).ok_or_else(|| {
                DpiError::usage(format!("gradient for unknown parameter {:?}", pg.id))
            })?;
            if slot.shape() != pg.grad.shape() {
                return Err(DpiError::usage(format!(
                    "gradient shape {:?} does not match parameter `{}` {:?}",
                    pg.grad.shape(),
                    self.names[pg.id.0],
                    slot.shape()
                )));
            }
            slot.add_assign(&pg.grad);
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
        norm
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot {
            name: self.name.clone(),
            entries: self
                .names
                .iter()
                .cloned()
                .zip(self.values.iter().cloned())
                .collect(),
        }
    }

    /// Overwrites values from a snapshot with identical names and shapes.
    pub fn load(&mut self, snap: &ParamSnapshot) -> Result<()> {
        if snap.entries.len() != self.values.len() {
            return Err(DpiError::config(format!(
                "snapshot for `{}` has {} tensors, expected {}",
                snap.name,
                snap.entries.len(),
                self.values.len()
            )));
        }
        for (i, (name, t)) in snap.entries.iter().enumerate() {
            if name != &self.names[i] || t.shape() != self.values[i].shape() {
                return Err(DpiError::config(format!(
                    "snapshot entry `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    self.names[i],
                    self.values[i].shape()
                )));
            }
            self.values[i] = t.clone();
        }
        self.zero_grad();
        Ok(())
    }
}
