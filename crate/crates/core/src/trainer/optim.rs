use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWHyper {
    pub fn with_decay(weight_decay: f64) -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            weight_decay,
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub hyper: AdamWHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, hyper: AdamWHyper) -> Self {
        let zeros: Vec<Vec<f64>> = params.values().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            hyper,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `x ← x·(1 − lr·λ) − lr·m̂/(√v̂ + ε)` for every tensor.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::InvalidArgument("gradient layout does not match the optimizer".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", params.name_at(i)),
                    tick: 0,
                });
            }
        }
        self.step += 1;
        let AdamWHyper {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let shrink = 1.0 - lr * weight_decay;
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data: Vec<f64> = params
                .value_at(i)
                .data()
                .iter()
                .enumerate()
                .map(|(k, &x)| {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                    let (mh, vh) = (m[k] / c1, v[k] / c2);
                    x * shrink - lr * mh / (vh.sqrt() + eps)
                })
                .collect();
            params.update_flat(i, data)?;
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base` over `warmup` iterations, then cosine
/// decay to 0 at `iterations`.
pub fn lr_schedule(iter: usize, base: f64, warmup: usize, iterations: usize) -> f64 {
    if iter < warmup {
        return base * iter as f64 / warmup as f64;
    }
    let span = iterations.saturating_sub(warmup).max(1) as f64;
    let progress = ((iter - warmup) as f64 / span).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Global L2 norm of all gradients.
pub fn grad_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scales every gradient by `max_norm/‖g‖` when the global norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
