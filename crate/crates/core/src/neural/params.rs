use std::collections::BTreeMap;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Parameters recorded on a tape for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t.with_requires_grad(true));
    }

    /// Uniform in ±1/√fan_in.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut StreamRng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t)))
                .collect(),
        }
    }

    /// Copy gradients from the tape into each tensor's grad buffer (zeros if none flowed).
    pub fn collect_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for (name, t) in &mut self.tensors {
            let v = bound.get(name)?;
            let g = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
            t.set_grad(g)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}
