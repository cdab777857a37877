//! AdamW with per-step cosine annealing and a deterministic mini-batch loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("model is frozen; training rejected")]
    Frozen,
    #[error("empty training set")]
    Empty,
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate reached after the last step of the cosine schedule.
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            epochs: 60,
            batch_size: 4,
            lr_min: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and >= 0");
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad("lr_min must lie in [0, lr]");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    /// Cosine-annealed learning rate at `step` of `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let t = step as f64 / total.max(1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// A parameter vector together with a per-sample loss.
///
/// `sample` returns the loss terms of sample `idx` (last entry is the total
/// that is optimised) and adds `weight * d(total)/d(params)` into `grad`.
pub trait Trainable {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn n_samples(&self) -> usize;
    fn term_names(&self) -> Vec<&'static str>;
    fn sample(&self, idx: usize, weight: f64, grad: &mut [f64]) -> Vec<f64>;
}

/// Per-epoch mean of each loss term, in `term_names` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub terms: Vec<String>,
    pub epochs: Vec<Vec<f64>>,
}

impl LossHistory {
    /// Mean total loss per epoch.
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| *e.last().expect("at least one term")).collect()
    }
}

/// Round to the nearest f32; parameters live on the f32 grid so checkpoints
/// are lossless.
#[inline]
pub fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}

pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, cfg: &OptimizerConfig, lr: f64, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let p = params[i] - lr * cfg.weight_decay * params[i];
            params[i] = to_f32_grid(p - lr * mhat / (vhat.sqrt() + cfg.eps));
        }
    }
}

/// Mini-batch training. The sample order is reshuffled every epoch from a
/// stream seeded by `seed`; everything else is deterministic.
pub fn train<T: Trainable + ?Sized>(
    model: &mut T,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<LossHistory, TrainError> {
    cfg.validate()?;
    let n = model.n_samples();
    if n == 0 {
        return Err(TrainError::Empty);
    }
    let names = model.term_names();
    let n_terms = names.len();
    let n_params = model.params().len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut rng = seed::rng(seed);
    let mut opt = AdamW::new(n_params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; n_params];
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut per_sample = vec![vec![0.0; n_terms]; n];
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let terms = model.sample(idx, w, &mut grad);
                if terms.iter().any(|t| !t.is_finite()) || grad.iter().any(|g| !g.is_finite()) {
                    return Err(TrainError::NonFinite { epoch, batch });
                }
                per_sample[idx] = terms;
            }
            let lr = cfg.lr_at(step, total_steps);
            opt.step(cfg, lr, model.params_mut(), &grad);
            step += 1;
        }
        // Summed in sample order so the epoch mean does not depend on the shuffle.
        let means = (0..n_terms)
            .map(|t| per_sample.iter().map(|s| s[t]).sum::<f64>() / n as f64)
            .collect();
        history.push(means);
    }
    Ok(LossHistory {
        terms: names.into_iter().map(String::from).collect(),
        epochs: history,
    })
}
