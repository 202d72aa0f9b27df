//! Predicted-posterior heads, their negative log-likelihoods and the
//! collapse-prevention mechanisms.

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::Representation;
use crate::nn::ParamStore;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TAU: f64 = 0.2;
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DECORRELATION_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadFamily {
    Gaussian,
    Boltzmann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionHead {
    pub family: HeadFamily,
    pub sigma: f64,
    pub tau: f64,
    pub normalize_embeddings: bool,
    pub label_smoothing: f64,
}

impl PredictionHead {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            family: HeadFamily::Gaussian,
            sigma,
            tau: DEFAULT_TAU,
            normalize_embeddings: false,
            label_smoothing: 0.0,
        }
    }

    pub fn boltzmann(tau: f64) -> Self {
        Self {
            family: HeadFamily::Boltzmann,
            sigma: DEFAULT_SIGMA,
            tau,
            normalize_embeddings: true,
            label_smoothing: 0.0,
        }
    }

    pub fn with_label_smoothing(mut self, eps: f64) -> Self {
        self.label_smoothing = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            HeadFamily::Gaussian if !(self.sigma > 0.0) => Err(Error::NonPositiveSigma(self.sigma)),
            HeadFamily::Boltzmann if !(self.tau > 0.0) => Err(Error::NonPositiveTau(self.tau)),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            HeadFamily::Gaussian => "gaussian",
            HeadFamily::Boltzmann => "boltzmann",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Negatives,
    StopGradient,
    EmaTarget,
    Decorrelation,
    None,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Negatives => "negatives",
            Mechanism::StopGradient => "stop_gradient",
            Mechanism::EmaTarget => "ema_target",
            Mechanism::Decorrelation => "decorrelation",
            Mechanism::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub mechanism: Mechanism,
    pub ema_coeff: f64,
    pub decorrelation_weight: f64,
}

impl RegularizerSpec {
    pub fn new(mechanism: Mechanism) -> Self {
        Self {
            mechanism,
            ema_coeff: 0.995,
            decorrelation_weight: if mechanism == Mechanism::Decorrelation { 0.005 } else { 0.0 },
        }
    }
}

fn check_same_shape(a: &Representation, b: &Representation) -> Result<()> {
    if a.values.dim() != b.values.dim() || a.kind != b.kind {
        return Err(Error::ShapeMismatch(format!(
            "{} {:?} vs {} {:?}",
            a.kind.as_str(),
            a.values.dim(),
            b.kind.as_str(),
            b.values.dim()
        )));
    }
    Ok(())
}

/// `1/(2σ²)·‖z_y − ẑ_y‖²`, averaged over positions and dimensions for
/// dense representations.
pub fn gaussian_nll(z_y: &Representation, z_hat: &Representation, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    check_same_shape(z_y, z_hat)?;
    let sq: f64 = z_y
        .values
        .iter()
        .zip(z_hat.values.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let norm = if z_y.kind.is_dense() { z_y.values.len().max(1) as f64 } else { 1.0 };
    Ok(sq / norm / (2.0 * sigma * sigma))
}

/// Softmax cross-entropy with the positive at index 0.
pub fn softmax_cross_entropy(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[0])
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

/// `−log exp(ẑᵀz/τ) / Σ_{z'} exp(ẑᵀz'/τ)` over the positive and the given
/// negatives, optionally after unit-normalizing every embedding.
pub fn boltzmann_nll(
    z_hat: &Representation,
    z_pos: &Representation,
    negatives: &[Representation],
    tau: f64,
    normalize: bool,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    let d = z_hat.dim();
    let prep = |r: &Representation| -> Result<Vec<f64>> {
        if r.values.len() != d {
            return Err(Error::ShapeMismatch(format!("embedding of {} values, expected {d}", r.values.len())));
        }
        let v: Vec<f64> = r.values.iter().copied().collect();
        Ok(if normalize { unit(&v) } else { v })
    };
    let q = prep(z_hat)?;
    let mut logits = Vec::with_capacity(1 + negatives.len());
    for cand in std::iter::once(z_pos).chain(negatives) {
        let c = prep(cand)?;
        logits.push(q.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / tau);
    }
    softmax_cross_entropy(&logits)
}

/// `‖Ĉ − I‖²_F` for the cross-correlation `Ĉ` of column-standardized
/// features; zero-variance columns use an ε-floored std.
pub fn decorrelation_penalty(batch_z: &Array2<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(batch_z.clone());
    let p = decorrelation_node(&mut g, z)?;
    Ok(g.scalar(p))
}

/// θ' ← m·θ' + (1−m)·θ for every parameter.
pub fn ema_update(target: &mut ParamStore, online: &ParamStore, m: f64) -> Result<()> {
    target.check_same_structure(online)?;
    let ids: Vec<_> = target.ids().collect();
    for id in ids {
        let src = online.get(id);
        target.get_mut(id).zip_mut_with(src, |t, &o| *t = m * *t + (1.0 - m) * o);
    }
    Ok(())
}

/// Value-identical node that passes no gradient to its producer.
pub fn stop_gradient(g: &mut Graph, z: NodeId) -> NodeId {
    g.detach(z)
}

/// Graph form of [`gaussian_nll`] over a batch. Dense: mean over every
/// element. Global (one row per sample): per-row squared norm averaged over
/// rows.
pub fn gaussian_nll_node(g: &mut Graph, pred: NodeId, target: NodeId, sigma: f64, dense: bool) -> Result<NodeId> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if g.value(pred).dim() != g.value(target).dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            g.value(pred).dim(),
            g.value(target).dim()
        )));
    }
    let (n, d) = g.value(pred).dim();
    let r = g.sub(pred, target);
    let sq = g.square(r);
    let s = g.sum_all(sq);
    let norm = if dense { (n * d) as f64 } else { n as f64 };
    Ok(g.scale(s, 1.0 / (norm.max(1.0) * 2.0 * sigma * sigma)))
}

/// Graph form of the Boltzmann NLL for a batch of predictions against a
/// shared candidate matrix; row `i` of `pred` has its positive at candidate
/// `positives[i]`. Label smoothing `ε` mixes in the uniform target.
pub fn boltzmann_nll_node(
    g: &mut Graph,
    pred: NodeId,
    candidates: NodeId,
    positives: &[usize],
    head: &PredictionHead,
) -> Result<NodeId> {
    if !(head.tau > 0.0) {
        return Err(Error::NonPositiveTau(head.tau));
    }
    let (n, d) = g.value(pred).dim();
    let (m, dc) = g.value(candidates).dim();
    if m == 0 {
        return Err(Error::EmptyCandidateSet);
    }
    if d != dc || positives.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n}x{d} predictions, {m}x{dc} candidates, {} positives",
            positives.len()
        )));
    }
    let (p, c) = if head.normalize_embeddings {
        (g.l2_normalize_rows(pred), g.l2_normalize_rows(candidates))
    } else {
        (pred, candidates)
    };
    let logits = g.matmul_t(p, c);
    let logits = g.scale(logits, 1.0 / head.tau);
    let logp = g.log_softmax_rows(logits);
    let eps = head.label_smoothing;
    let mut weights = Array2::from_elem((n, m), eps / m as f64);
    for (i, &j) in positives.iter().enumerate() {
        if j >= m {
            return Err(Error::ShapeMismatch(format!("positive {j} outside {m} candidates")));
        }
        weights[[i, j]] += 1.0 - eps;
    }
    let picked = g.mul_const(logp, weights);
    let s = g.sum_all(picked);
    Ok(g.scale(s, -1.0 / n as f64))
}

/// Boltzmann NLL whose candidate set is the whole unit sphere: the
/// normalizer is then independent of the prediction and the loss reduces to
/// `−ẑᵀz/τ` on unit vectors (constant dropped), averaged over rows.
pub fn sphere_boltzmann_nll_node(g: &mut Graph, pred: NodeId, target: NodeId, tau: f64) -> Result<NodeId> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    if g.value(pred).dim() != g.value(target).dim() {
        return Err(Error::ShapeMismatch("prediction and target differ in shape".into()));
    }
    let n = g.value(pred).nrows() as f64;
    let p = g.l2_normalize_rows(pred);
    let t = g.l2_normalize_rows(target);
    let prod = g.mul(p, t);
    let s = g.sum_all(prod);
    Ok(g.scale(s, -1.0 / (n * tau)))
}

/// Graph form of [`decorrelation_penalty`].
pub fn decorrelation_node(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    let (n, d) = g.value(z).dim();
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("decorrelation needs at least 2 rows, got {n}")));
    }
    let zs = g.standardize_cols(z, DECORRELATION_EPS);
    let c = g.matmul_tn(zs, zs);
    let c = g.scale(c, 1.0 / n as f64);
    let eye = g.constant(Array2::eye(d));
    let diff = g.sub(c, eye);
    let sq = g.square(diff);
    Ok(g.sum_all(sq))
}

/// Mean entropy (nats) of the row-wise softmax over in-batch cosine
/// similarities at temperature `tau`. Identical features give `ln n`.
pub fn boltzmann_entropy(features: &Array2<f64>, tau: f64) -> f64 {
    let n = features.nrows();
    if n == 0 {
        return 0.0;
    }
    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| unit(&r.to_vec())).collect();
    let mut total = 0.0;
    for a in &rows {
        let logits: Vec<f64> = rows.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let h: f64 = logits
            .iter()
            .map(|l| {
                let p = (l - m).exp() / z;
                if p > 0.0 {
                    -p * p.ln()
                } else {
                    0.0
                }
            })
            .sum();
        total += h;
    }
    total / n as f64
}
