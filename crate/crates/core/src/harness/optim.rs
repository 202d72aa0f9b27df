//! AdamW with linear warmup and cosine decay.

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub cosine: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            warmup_frac: 0.05,
            cosine: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::ConfigInvalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::ConfigInvalid("betas must lie in [0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) || self.weight_decay < 0.0 {
            return Err(Error::ConfigInvalid("warmup fraction or weight decay out of range".into()));
        }
        Ok(())
    }

    /// Learning rate at `step` of `total` steps.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        let total = total.max(1) as f64;
        let t = step as f64;
        let warm = (self.warmup_frac * total).floor();
        if t < warm {
            return self.lr * (t + 1.0) / warm;
        }
        if !self.cosine {
            return self.lr;
        }
        let progress = ((t - warm) / (total - warm).max(1.0)).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Moment estimates of every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: OptimizerConfig,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|(_, _, a)| Array2::zeros(a.raw_dim())).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// left untouched; weight decay applies only to decaying parameters.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.param(id) else { continue };
            let decay = params.decays(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let upd = (*m / c1) / ((*v / c2).sqrt() + self.cfg.eps);
                if decay {
                    *p -= lr * self.cfg.weight_decay * *p;
                }
                *p -= lr * upd;
            });
        }
    }
}

/// Momentum coefficient at `step`: cosine ramp from `base` toward 1.
pub fn ema_coeff_at(base: f64, step: u64, total: u64) -> f64 {
    let progress = (step as f64 / total.max(1) as f64).min(1.0);
    1.0 - (1.0 - base) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let c = OptimizerConfig::default();
        assert!((c.lr_at(0, 100) - c.lr / 5.0).abs() < 1e-15);
        assert!((c.lr_at(4, 100) - c.lr).abs() < 1e-15);
        assert!(c.lr_at(99, 100) < 1e-5);
        assert_eq!(ema_coeff_at(0.995, 0, 10), 0.995);
        assert!((ema_coeff_at(0.995, 10, 10) - 1.0).abs() < 1e-15);
    }
}
