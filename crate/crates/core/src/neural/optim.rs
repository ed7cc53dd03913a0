use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub decay_rate: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            decay_rate: 0.9,
            eps: 1e-8,
        }
    }
}

/// Running mean of squared gradients, one buffer per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RmsPropState {
    pub accumulators: BTreeMap<String, Vec<f64>>,
}

/// `acc ← ρ·acc + (1−ρ)·g²`, then `p ← p − lr·g / √(acc + ε)`.
pub fn rmsprop_update(param: &mut [f64], grad: &[f64], acc: &mut [f64], lr: f64, cfg: &RmsPropConfig) -> Result<()> {
    if param.len() != grad.len() || param.len() != acc.len() {
        return Err(Error::Shape(format!(
            "rmsprop: {} params, {} grads, {} accumulators",
            param.len(),
            grad.len(),
            acc.len()
        )));
    }
    let rho = cfg.decay_rate;
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a = rho * *a + (1.0 - rho) * g * g;
        *p -= lr * g / (*a + cfg.eps).sqrt();
    }
    Ok(())
}

/// Apply one RMSProp step to every parameter that carries a gradient.
pub fn rmsprop_step(params: &mut ParamStore, state: &mut RmsPropState, lr: f64, cfg: &RmsPropConfig) -> Result<()> {
    for (name, t) in params.iter_mut() {
        let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        let acc = state
            .accumulators
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        rmsprop_update(t.data_mut(), &grad, acc, lr, cfg)?;
    }
    Ok(())
}
