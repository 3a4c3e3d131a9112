use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decay per step is `learning_rate · weight_decay · p`.
    pub weight_decay: f64,
    /// Global ℓ₂ bound on the concatenated gradient; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// What one optimizer step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Adam moments and step count.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub learning_rate: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Scales `grads` so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &Gradients, max_norm: f64) -> (Gradients, f64, bool) {
    let norm = grads.global_norm();
    if norm > max_norm {
        (grads.scaled(max_norm / norm), norm, true)
    } else {
        (grads.clone(), norm, false)
    }
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig, learning_rate: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        OptimizerState {
            config,
            learning_rate,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Clip, then a bias-corrected Adam update, then decoupled decay
    /// `p ← p − η·wd·p`. Updated values are rounded to `precision`.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &Gradients, precision: Precision) -> Result<StepStats> {
        if grads.0.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.0.len(),
                params.len()
            )));
        }
        if !grads.is_finite() {
            return Err(Error::NumericOverflow { op: "adam-step" });
        }
        let (grads, grad_norm, clipped) = match self.config.clip_norm {
            Some(c) => clip_global_norm(grads, c),
            None => (grads.clone(), grads.global_norm(), false),
        };
        self.step += 1;
        let AdamConfig {
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            weight_decay: wd,
            ..
        } = self.config;
        let lr = self.learning_rate;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let p = params.get(id);
            let g = grads.get(id).data();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let mut next: Vec<f64> = p.data().to_vec();
            for i in 0..next.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                next[i] -= lr * mh / (vh.sqrt() + eps);
                next[i] -= lr * wd * next[i];
            }
            precision.round_slice(&mut next);
            params.set(id, Tensor::new(p.shape().to_vec(), next)?)?;
        }
        Ok(StepStats { grad_norm, clipped })
    }
}

/// `η₀ · factor^⌊(epoch − 1) / every⌋` for 1-based `epoch`.
pub fn learning_rate_at(initial: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    if every == 0 {
        return initial;
    }
    initial * factor.powi((epoch.saturating_sub(1) / every) as i32)
}
