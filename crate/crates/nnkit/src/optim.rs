//! Named parameters with Adam moments.

use std::collections::BTreeMap;

use crate::{NnError, Tensor};

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Parameters in name order, each with first and second Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a parameter; moments reset to zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.slots.insert(name.into(), Slot { value, m, v });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Zero gradients shaped like every parameter.
    pub fn zero_grads(&self) -> Grads {
        self.slots
            .iter()
            .map(|(k, s)| (k.clone(), Tensor::zeros(s.value.shape())))
            .collect()
    }

    /// Replaces every parameter value with the matching named tensor.
    /// Names and shapes must match exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<(), NnError> {
        if values.len() != self.slots.len() {
            return Err(NnError::Checkpoint(format!(
                "{} tensors in checkpoint, model has {}",
                values.len(),
                self.slots.len()
            )));
        }
        for (name, t) in &values {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| NnError::Checkpoint(format!("unexpected tensor `{name}`")))?;
            if slot.value.shape() != t.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.value.shape()
                )));
            }
        }
        for (name, t) in values {
            self.insert(name, t);
        }
        self.step = 0;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2.5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(0.5),
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.scale(k);
        }
    }
    norm
}

/// One Adam update after global-norm clipping. Returns the unclipped norm.
pub fn adam_step(params: &mut ParamStore, grads: &Grads, cfg: &AdamConfig) -> Result<f64, NnError> {
    for (name, slot) in &params.slots {
        let g = grads.get(name).ok_or_else(|| NnError::MissingGrad(name.clone()))?;
        if g.shape() != slot.value.shape() {
            return Err(NnError::Shape(format!("gradient for `{name}` is {:?}", g.shape())));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite(name.clone()));
        }
    }
    if let Some(name) = grads.keys().find(|k| !params.slots.contains_key(*k)) {
        return Err(NnError::UnknownParam(name.clone()));
    }
    let mut grads = grads.clone();
    let norm = match cfg.clip {
        Some(c) => clip_grad_norm(&mut grads, c),
        None => grads.values().map(Tensor::sum_sq).sum::<f64>().sqrt(),
    };
    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, slot) in params.slots.iter_mut() {
        let g = grads[name].data();
        let (value, m, v) = (slot.value.data_mut(), slot.m.data_mut(), slot.v.data_mut());
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            value[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(norm)
}
