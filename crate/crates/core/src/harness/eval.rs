//! Frozen-feature evaluation: linear probe and collapse diagnostics.

use crate::error::{Error, Result};
use crate::heads::{boltzmann_entropy, DEFAULT_TAU};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub feature_std: f64,
    pub effective_rank: f64,
    pub boltzmann_entropy: f64,
}

/// Mean over dimensions of the per-dimension standard deviation.
pub fn feature_std(features: &Array2<f64>) -> f64 {
    if features.nrows() == 0 || features.ncols() == 0 {
        return 0.0;
    }
    features.std_axis(Axis(0), 0.0).mean().unwrap_or(0.0)
}

/// `exp` of the entropy of the normalized singular values; `1` when every
/// singular value vanishes.
pub fn effective_rank(features: &Array2<f64>) -> f64 {
    let (n, d) = features.dim();
    if n == 0 || d == 0 {
        return 1.0;
    }
    let m = DMatrix::from_row_iterator(n, d, features.iter().copied());
    let sv = m.singular_values();
    let total: f64 = sv.iter().sum();
    if !(total > 0.0) {
        return 1.0;
    }
    let h: f64 = sv
        .iter()
        .map(|&s| s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.exp()
}

pub fn collapse_report(features: &Array2<f64>) -> CollapseReport {
    CollapseReport {
        feature_std: feature_std(features),
        effective_rank: effective_rank(features),
        boltzmann_entropy: boltzmann_entropy(features, DEFAULT_TAU),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.05,
            weight_decay: 1e-4,
        }
    }
}

/// Softmax-regression classifier on standardized features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Array1<f64>,
    std: Array1<f64>,
    w: Array2<f64>,
    b: Array1<f64>,
}

impl LinearProbe {
    /// Full-batch Adam on the mean cross-entropy.
    pub fn fit(x: &Array2<f64>, labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || n != labels.len() {
            return Err(Error::ShapeMismatch(format!("{n} feature rows for {} labels", labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::ShapeMismatch(format!("label {l} outside {classes} classes")));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-8));
        let xs = (x - &mean) / &std;
        let mut w = Array2::<f64>::zeros((d, classes));
        let mut b = Array1::<f64>::zeros(classes);
        let (mut mw, mut vw) = (w.clone(), w.clone());
        let (mut mb, mut vb) = (b.clone(), b.clone());
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut onehot = Array2::<f64>::zeros((n, classes));
        for (i, &l) in labels.iter().enumerate() {
            onehot[[i, l]] = 1.0;
        }
        for t in 1..=cfg.epochs {
            let logits = xs.dot(&w) + &b;
            let mut p = logits.clone();
            for mut row in p.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row /= s;
            }
            let delta = (p - &onehot) / n as f64;
            let gw = xs.t().dot(&delta) + cfg.weight_decay * &w;
            let gb = delta.sum_axis(Axis(0));
            let c1 = 1.0 - f64::powi(b1, t as i32);
            let c2 = 1.0 - f64::powi(b2, t as i32);
            ndarray::Zip::from(&mut w).and(&mut mw).and(&mut vw).and(&gw).for_each(|w, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
            ndarray::Zip::from(&mut b).and(&mut mb).and(&mut vb).and(&gb).for_each(|w, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(Self { mean, std, w, b })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let xs = (x - &self.mean) / &self.std;
        let logits = xs.dot(&self.w) + &self.b;
        logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }

    pub fn accuracy(&self, x: &Array2<f64>, labels: &[usize]) -> f64 {
        let pred = self.predict(x);
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Trains a probe on `(train_x, train_y)` and returns top-1 accuracy on
/// the held-out split.
pub fn probe_accuracy(
    train_x: &Array2<f64>,
    train_y: &[usize],
    val_x: &Array2<f64>,
    val_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    Ok(LinearProbe::fit(train_x, train_y, classes, cfg)?.accuracy(val_x, val_y))
}
