//! The combined multi-input multi-target objective: mixed-input batches,
//! grouped losses and dynamic SSP/SP weighting.

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::heads::{boltzmann_nll, gaussian_nll, gaussian_nll_node, boltzmann_nll_node, HeadFamily, PredictionHead};
use crate::methods::{MethodConfig, TargetTransform};
use crate::model::{check_partition, validate_batch, Image, LossRole, Representation, Sample, TargetGroupSpec, TransformKind, ViewRecord};
use crate::nn::{target_coords_in_input_frame, DecodePlan, DecodeRequest, Weights};
use crate::pipeline::{overlapping_augmentation, Branches, DetachedTargets, Model};
use crate::rng::derive_seed;
use crate::transforms::{generate_blockwise_mask, mix_pixels, sample_augmentation, AugmentSpec, MaskPattern};
use serde::{Deserialize, Serialize};

/// Lower bound on the SP gradient EMA in the weight ratio.
pub const LAMBDA_EPS: f64 = 1e-12;

/// Category ids or captions of one side of every pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticTargets {
    pub categories: Vec<usize>,
    pub captions: Vec<Vec<u32>>,
}

/// A batch of mixed inputs. Pair `b` mixes image `i` (mask value 1) with
/// image `j` (mask value 0).
#[derive(Debug, Clone)]
pub struct M3iBatch {
    pub pair_ids: Vec<(u64, u64)>,
    pub inputs_i: Vec<ViewRecord>,
    pub inputs_j: Vec<ViewRecord>,
    pub masks: Vec<MaskPattern>,
    pub mixed: Vec<Image>,
    pub targets_i: Vec<ViewRecord>,
    pub targets_j: Vec<ViewRecord>,
    pub semantic_i: SemanticTargets,
    pub semantic_j: SemanticTargets,
}

impl M3iBatch {
    pub fn len(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_ids.is_empty()
    }
}

/// Pairs sample `b` with sample `(b + 1) % n`.
pub fn cyclic_pairs(samples: &[Sample]) -> Vec<(Sample, Sample)> {
    let n = samples.len();
    (0..n).map(|b| (samples[b].clone(), samples[(b + 1) % n].clone())).collect()
}

fn push_semantic(out: &mut SemanticTargets, s: &Sample, kind: TargetTransform) {
    match kind {
        TargetTransform::Category => out.categories.push(s.category.expect("validated")),
        TargetTransform::Text => out.captions.push(s.caption.clone().expect("validated")),
        TargetTransform::View1 => {}
    }
}

fn target_view(s: &Sample, spec: &AugmentSpec, seed: u64, input: &ViewRecord, same: bool) -> Result<ViewRecord> {
    if same {
        let mut t = input.clone();
        t.descriptor.kind = TransformKind::Augment;
        t.descriptor.mask_ref = None;
        Ok(t)
    } else {
        overlapping_augmentation(s, spec, seed, input)
    }
}

/// Draws input views, one shared mask per pair, the mixed pixels and all
/// four targets. Target geometry follows `cfg`'s layout.
pub fn build_m3i_batch(
    pairs: &[(Sample, Sample)],
    cfg: &MethodConfig,
    spec: &AugmentSpec,
    rng_seed: u64,
) -> Result<M3iBatch> {
    let settings = cfg
        .m3i
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid(format!("{} is not a combined method", cfg.name)))?;
    let (same_i, same_j) = settings.layout.same_views();
    let (gh, gw) = cfg.encoder.grid();
    let p = cfg.encoder.patch_size;
    let mut out = M3iBatch {
        pair_ids: vec![],
        inputs_i: vec![],
        inputs_j: vec![],
        masks: vec![],
        mixed: vec![],
        targets_i: vec![],
        targets_j: vec![],
        semantic_i: SemanticTargets::default(),
        semantic_j: SemanticTargets::default(),
    };
    for (si, sj) in pairs {
        if si.id == sj.id {
            return Err(Error::SamePairedSample(si.id));
        }
        validate_batch(std::slice::from_ref(si), cfg)?;
        validate_batch(std::slice::from_ref(sj), cfg)?;
        let pseed = derive_seed(&[rng_seed, si.id, sj.id]);
        let mseed = derive_seed(&[pseed, 3]);
        let mask = generate_blockwise_mask(gh, gw, cfg.mask_ratio, p, mseed);
        let mut xi = sample_augmentation(si, spec, derive_seed(&[pseed, 1]))?;
        let mut xj = sample_augmentation(sj, spec, derive_seed(&[pseed, 2]))?;
        for x in [&mut xi, &mut xj] {
            x.descriptor.kind = TransformKind::AugmentMasked;
            x.descriptor.mask_ref = Some(mseed);
        }
        let yi = target_view(si, spec, derive_seed(&[pseed, 4]), &xi, same_i)?;
        let yj = target_view(sj, spec, derive_seed(&[pseed, 5]), &xj, same_j)?;
        out.mixed.push(mix_pixels(&xi.pixels, &xj.pixels, &mask)?);
        out.pair_ids.push((si.id, sj.id));
        out.masks.push(mask);
        out.inputs_i.push(xi);
        out.inputs_j.push(xj);
        out.targets_i.push(yi);
        out.targets_j.push(yj);
        let kind = settings.semantic_target;
        push_semantic(&mut out.semantic_i, si, kind);
        push_semantic(&mut out.semantic_j, sj, kind);
    }
    Ok(out)
}

/// Per-term loss values of one combined step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M3iBreakdown {
    pub ssp_i: f64,
    pub ssp_j: f64,
    pub sp_i: f64,
    pub sp_j: f64,
    pub lambda: f64,
}

impl M3iBreakdown {
    pub fn total(&self) -> f64 {
        (self.ssp_i + self.ssp_j) + self.lambda * (self.sp_i + self.sp_j)
    }
}

/// Loss nodes of one combined step.
#[derive(Debug, Clone, Copy)]
pub struct M3iLoss {
    pub total: NodeId,
    pub ssp: NodeId,
    pub sp: NodeId,
    pub ssp_i: NodeId,
    pub ssp_j: NodeId,
    pub sp_i: NodeId,
    pub sp_j: NodeId,
    pub enc_out: NodeId,
    pub lambda: f64,
}

impl M3iLoss {
    pub fn breakdown(&self, g: &Graph) -> M3iBreakdown {
        M3iBreakdown {
            ssp_i: g.scalar(self.ssp_i),
            ssp_j: g.scalar(self.ssp_j),
            sp_i: g.scalar(self.sp_i),
            sp_j: g.scalar(self.sp_j),
            lambda: self.lambda,
        }
    }

    /// Full-tensor L2 norms of the SSP and SP gradients at the encoder
    /// output.
    pub fn grad_norms(&self, g: &Graph) -> (f64, f64) {
        let norm = |loss| {
            g.backward_until(loss, Some(self.enc_out))
                .wrt(self.enc_out)
                .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
                .unwrap_or(0.0)
        };
        (norm(self.ssp), norm(self.sp))
    }
}

/// Grid cells each pair supervises: `(cells of target i, cells of target j)`.
pub fn supervised_cells(mask: &MaskPattern) -> (Vec<usize>, Vec<usize>) {
    (mask.visible_positions(), mask.masked_positions())
}

/// Detached image targets of both sides of every pair.
pub fn detached_m3i_targets(model: &Model, batch: &M3iBatch) -> Result<(DetachedTargets, DetachedTargets)> {
    let ti: Vec<&Image> = batch.targets_i.iter().map(|v| &v.pixels).collect();
    let tj: Vec<&Image> = batch.targets_j.iter().map(|v| &v.pixels).collect();
    Ok((model.detached_targets(&ti)?, model.detached_targets(&tj)?))
}

fn plan_for(input: &ViewRecord, target: &ViewRecord, p: usize, cells: usize, gw: usize) -> Result<DecodePlan> {
    if input.descriptor.same_geometry(&target.descriptor) {
        Ok(DecodePlan::Aligned { grid_len: cells, gw })
    } else {
        Ok(DecodePlan::Cross {
            coords: target_coords_in_input_frame(&input.descriptor, &target.descriptor, p)?,
        })
    }
}

/// Builds the combined loss graph:
/// `total = (ssp_i + ssp_j) + λ·(sp_i + sp_j)`.
///
/// The encoder sees every cell of the mixed image. Image `i`'s decoder and
/// pool read only the cells with mask value 1, image `j`'s only those with
/// mask value 0. Image-target losses are taken at the cells returned by
/// [`supervised_cells`].
pub fn compute_m3i_loss(
    model: &Model,
    g: &mut Graph,
    batch: &M3iBatch,
    detached: &(DetachedTargets, DetachedTargets),
    lambda: f64,
) -> Result<M3iLoss> {
    let Branches::M3i {
        dec_i,
        dec_j,
        pool_i,
        pool_j,
        semantic,
    } = &model.branches
    else {
        return Err(Error::ConfigInvalid(format!("{} is not a combined method", model.method.name)));
    };
    let cfg = &model.method;
    let settings = cfg.m3i.as_ref().expect("combined method");
    let w = Weights::Train(&model.params);
    let n = batch.len();
    let mixed: Vec<&Image> = batch.mixed.iter().collect();
    let enc = model.encoder.forward(g, &w, &mixed, None)?;
    let (gh, gw) = enc.grid;
    let cells = gh * gw;
    let p = cfg.encoder.patch_size;

    let side = |g: &mut Graph,
                    dec: &crate::nn::DenseDecoder,
                    pool: &crate::nn::AttentionPool,
                    inputs: &[ViewRecord],
                    targets: &[ViewRecord],
                    det: &DetachedTargets,
                    sem: &SemanticTargets,
                    first: bool|
     -> Result<(NodeId, NodeId)> {
        let mut requests = Vec::with_capacity(n);
        let mut own_rows = Vec::new();
        let mut ranges = Vec::with_capacity(n);
        let mut loss_idx = Vec::new();
        for b in 0..n {
            let (ci, cj) = supervised_cells(&batch.masks[b]);
            let own = if first { &ci } else { &cj };
            if own.is_empty() {
                return Err(Error::DegenerateBatch(format!("pair {b} leaves one image without cells")));
            }
            let rows: Vec<usize> = own.iter().map(|c| enc.offsets[b] + c).collect();
            ranges.push((own_rows.len(), rows.len()));
            own_rows.extend_from_slice(&rows);
            let ctx = g.gather_rows(enc.out, &rows);
            requests.push(DecodeRequest {
                context: ctx,
                context_positions: own.clone(),
                plan: plan_for(&inputs[b], &targets[b], p, cells, gw)?,
            });
            loss_idx.extend(own.iter().map(|c| b * cells + c));
        }
        let (pred, _) = dec.forward(g, &w, &requests);
        let target = match &det.dense {
            Some(t) => g.constant(t.clone()),
            None => {
                let imgs: Vec<&Image> = targets.iter().map(|v| &v.pixels).collect();
                model.encoder.forward(g, &w, &imgs, None)?.out
            }
        };
        let pr = g.gather_rows(pred, &loss_idx);
        let ssp = match cfg.head.family {
            HeadFamily::Gaussian => {
                let t = g.gather_rows(target, &loss_idx);
                gaussian_nll_node(g, pr, t, cfg.head.sigma, true)?
            }
            HeadFamily::Boltzmann => boltzmann_nll_node(g, pr, target, &loss_idx, &cfg.head)?,
        };
        let own_tokens = g.gather_rows(enc.out, &own_rows);
        let pooled = pool.forward(g, &w, own_tokens, &ranges);
        let (cands, positives) = semantic.candidates(g, &w, &sem.categories, &sem.captions)?;
        let sp = boltzmann_nll_node(g, pooled, cands, &positives, &settings.semantic_head)?;
        Ok((ssp, sp))
    };
    let (ssp_i, sp_i) = side(
        g,
        dec_i,
        pool_i,
        &batch.inputs_i,
        &batch.targets_i,
        &detached.0,
        &batch.semantic_i,
        true,
    )?;
    let (ssp_j, sp_j) = side(
        g,
        dec_j,
        pool_j,
        &batch.inputs_j,
        &batch.targets_j,
        &detached.1,
        &batch.semantic_j,
        false,
    )?;
    let ssp = g.add(ssp_i, ssp_j);
    let sp = g.add(sp_i, sp_j);
    let weighted = g.scale(sp, lambda);
    let total = g.add(ssp, weighted);
    Ok(M3iLoss {
        total,
        ssp,
        sp,
        ssp_i,
        ssp_j,
        sp_i,
        sp_j,
        enc_out: enc.out,
        lambda,
    })
}

/// EMA-smoothed gradient norms and the SP weight derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicWeightState {
    pub g_ssp_ema: f64,
    pub g_sp_ema: f64,
    pub gamma: f64,
    pub ema_coeff: f64,
    pub lambda: f64,
}

impl DynamicWeightState {
    pub fn new(gamma: f64, ema_coeff: f64) -> Self {
        Self {
            g_ssp_ema: 0.0,
            g_sp_ema: 0.0,
            gamma,
            ema_coeff,
            lambda: 0.0,
        }
    }

    pub fn from_ema(g_ssp_ema: f64, g_sp_ema: f64, gamma: f64, ema_coeff: f64) -> Self {
        Self {
            g_ssp_ema,
            g_sp_ema,
            gamma,
            ema_coeff,
            lambda: lambda_of(gamma, g_ssp_ema, g_sp_ema),
        }
    }
}

/// `γ·ḡ_ssp / max(ḡ_sp, ε)`
pub fn lambda_of(gamma: f64, g_ssp_ema: f64, g_sp_ema: f64) -> f64 {
    gamma * g_ssp_ema / g_sp_ema.max(LAMBDA_EPS)
}

/// Folds one step's measured norms into the EMAs and recomputes λ.
pub fn update_dynamic_weight(state: DynamicWeightState, grad_ssp_norm: f64, grad_sp_norm: f64) -> DynamicWeightState {
    let m = state.ema_coeff;
    let g_ssp_ema = m * state.g_ssp_ema + (1.0 - m) * grad_ssp_norm;
    let g_sp_ema = m * state.g_sp_ema + (1.0 - m) * grad_sp_norm;
    DynamicWeightState {
        g_ssp_ema,
        g_sp_ema,
        lambda: lambda_of(state.gamma, g_ssp_ema, g_sp_ema),
        ..state
    }
}

/// One target's prediction, value and (for Boltzmann heads) negatives.
#[derive(Debug, Clone)]
pub struct GroupMember {
    pub prediction: Representation,
    pub target: Representation,
    pub negatives: Vec<Representation>,
}

/// Per-group NLL: each group's head scores all of its member targets and
/// the group loss is the sum over members.
pub fn grouped_loss(groups: &[TargetGroupSpec], heads: &[PredictionHead], members: &[GroupMember]) -> Result<Vec<f64>> {
    let ids: Vec<usize> = (0..members.len()).collect();
    check_partition(groups, &ids)?;
    groups
        .iter()
        .map(|grp| {
            let head = heads
                .get(grp.head)
                .ok_or_else(|| Error::ConfigInvalid(format!("group {} names head {}", grp.index, grp.head)))?;
            grp.member_targets.iter().try_fold(0.0, |acc, &t| {
                let m = &members[t];
                let l = match head.family {
                    HeadFamily::Gaussian => gaussian_nll(&m.target, &m.prediction, head.sigma)?,
                    HeadFamily::Boltzmann => {
                        boltzmann_nll(&m.prediction, &m.target, &m.negatives, head.tau, head.normalize_embeddings)?
                    }
                };
                Ok(acc + l)
            })
        })
        .collect()
}

/// Sum of the group losses of one role.
pub fn role_total(groups: &[TargetGroupSpec], losses: &[f64], role: LossRole) -> f64 {
    groups.iter().zip(losses).filter(|(g, _)| g.role == role).map(|(_, l)| l).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        let s = DynamicWeightState::from_ema(1.0, 1.0, 1.0, 0.99);
        assert_eq!(s.lambda, 1.0);
        let s = DynamicWeightState::from_ema(2.0, 1.0, 1.0, 0.99);
        assert_eq!(s.lambda, 2.0);
        let s = DynamicWeightState::from_ema(2.0, 1.0, 0.5, 0.99);
        assert_eq!(s.lambda, 1.0);
    }

    #[test]
    fn update_converges_to_stream_ratio() {
        let mut s = DynamicWeightState::new(1.0, 0.9);
        for _ in 0..500 {
            s = update_dynamic_weight(s, 3.0, 1.5);
        }
        assert!((s.lambda - 2.0).abs() < 1e-12);
        assert!((s.g_ssp_ema - 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_sp_gradient_is_floored() {
        let s = update_dynamic_weight(DynamicWeightState::new(1.0, 0.5), 1.0, 0.0);
        assert!(s.lambda.is_finite());
    }
}
