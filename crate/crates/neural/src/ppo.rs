//! Clipped-surrogate policy optimisation over a buffer of transitions.

use nnkit::{adam_step, AdamConfig, Grads, ParamStore};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::net::{Features, Model};
use crate::NeuralError;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Features,
    pub action: usize,
    /// Log-probability of `action` under the collecting policy.
    pub log_prob: f64,
    /// Value estimate at collection time.
    pub value: f64,
    pub reward: f64,
    /// Discounted return from this step.
    pub ret: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub value_coef: f64,
    /// Standardize advantages within each minibatch.
    pub normalize_advantages: bool,
    pub adam: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            epochs: 10,
            batch_size: 64,
            value_coef: 0.5,
            normalize_advantages: true,
            adam: AdamConfig::default(),
        }
    }
}

/// Mean losses over all minibatches of an update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    /// Mean clipped surrogate objective (to be maximised).
    pub surrogate: f64,
    pub value_loss: f64,
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Fills in discounted returns and advantages for one episode.
pub fn compute_returns(episode: &mut [Transition], gamma: f64) {
    let mut g = 0.0;
    for tr in episode.iter_mut().rev() {
        g = tr.reward + gamma * g;
        tr.ret = g;
        tr.advantage = g - tr.value;
    }
}

fn batch_advantages(batch: &[&Transition], normalize: bool) -> Vec<f64> {
    let adv: Vec<f64> = batch.iter().map(|t| t.advantage).collect();
    if !normalize || adv.len() < 2 {
        return adv;
    }
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        return adv.iter().map(|a| a - mean).collect();
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// Minibatch loss `-mean(surrogate) + c * mean((G - V)^2)` and its
/// components.
pub fn minibatch_loss(
    model: &Model,
    params: &ParamStore,
    batch: &[&Transition],
    cfg: &PpoConfig,
) -> Result<(f64, LossStats), NeuralError> {
    let adv = batch_advantages(batch, cfg.normalize_advantages);
    let b = batch.len() as f64;
    let mut stats = LossStats::default();
    for (tr, a) in batch.iter().zip(adv) {
        let pass = model.forward(params, &tr.features)?;
        let ratio = (pass.probs.data()[tr.action].ln() - tr.log_prob).exp();
        stats.surrogate += clipped_surrogate(ratio, a, cfg.clip_eps) / b;
        stats.value_loss += (tr.ret - pass.value).powi(2) / b;
    }
    let loss = -stats.surrogate + cfg.value_coef * stats.value_loss;
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss);
    }
    Ok((loss, stats))
}

/// Loss and its parameter gradients, summed over the batch in order.
pub fn minibatch_grads(
    model: &Model,
    params: &ParamStore,
    batch: &[&Transition],
    cfg: &PpoConfig,
) -> Result<(f64, LossStats, Grads), NeuralError> {
    let adv = batch_advantages(batch, cfg.normalize_advantages);
    let b = batch.len() as f64;
    let mut stats = LossStats::default();
    let mut grads = params.zero_grads();
    for (tr, a) in batch.iter().zip(adv) {
        let pass = model.forward(params, &tr.features)?;
        let ratio = (pass.probs.data()[tr.action].ln() - tr.log_prob).exp();
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
        stats.surrogate += unclipped.min(clipped) / b;
        stats.value_loss += (tr.ret - pass.value).powi(2) / b;
        // d ratio / d ln p = ratio; the clipped branch is constant
        let g_logp = if unclipped <= clipped { -unclipped / b } else { 0.0 };
        let g_value = cfg.value_coef * 2.0 * (pass.value - tr.ret) / b;
        model.backward(params, &tr.features, &pass, tr.action, g_logp, g_value, &mut grads)?;
    }
    let loss = -stats.surrogate + cfg.value_coef * stats.value_loss;
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss);
    }
    Ok((loss, stats, grads))
}

/// Several epochs of shuffled minibatch updates over `buffer`.
pub fn ppo_update(
    model: &Model,
    params: &mut ParamStore,
    buffer: &[Transition],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossStats, NeuralError> {
    let mut idx: Vec<usize> = (0..buffer.len()).collect();
    let mut total = LossStats::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &buffer[i]).collect();
            let (_, stats, grads) = minibatch_grads(model, params, &batch, cfg)?;
            adam_step(params, &grads, &cfg.adam)?;
            total.surrogate += stats.surrogate;
            total.value_loss += stats.value_loss;
            batches += 1;
        }
    }
    if batches > 0 {
        total.surrogate /= batches as f64;
        total.value_loss /= batches as f64;
    }
    Ok(total)
}
