use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// One AdamW update of a single tensor. `step` counts from 1.
///
/// Decay is decoupled: `p ← p·(1 − lr·wd)` then the bias-corrected Adam step.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, cfg: &AdamWConfig, decay: bool) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let shrink = if decay { 1.0 - lr * cfg.weight_decay } else { 1.0 };
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        param[i] = param[i] * shrink - lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Optimizer state for a whole [`ParamStore`]. Weight decay applies only to
/// parameters registered as decaying (matrices, not biases or norm gains).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let decay = store.decays(id);
            adamw_step(store.get_mut(id).data_mut(), &grads[id.0], &mut self.m[id.0], &mut self.v[id.0], self.step, lr, &self.cfg, decay);
        }
    }
}

/// Cosine decay from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (PI * t).cos())
}
