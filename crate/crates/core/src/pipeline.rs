//! Model assembly for a method and the single-input single-target loss.

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::heads::{
    boltzmann_nll_node, decorrelation_node, gaussian_nll_node, sphere_boltzmann_nll_node, HeadFamily, Mechanism,
};
use crate::image_ops::patchify;
use crate::methods::{validate_method, InputTransform, MethodConfig, TargetEncoderConfig, TargetEncoderKind, TargetTransform};
use crate::model::{validate_batch, Image, ReprKind, Sample, TransformKind, ViewRecord};
use crate::nn::{
    target_coords_in_input_frame, AttentionPool, CategoryTable, DecodePlan, DecodeRequest, DenseDecoder, Encoded,
    Linear, ParamStore, TextEncoder, VitEncoder, Weights,
};
use crate::rng::{derive_seed, rng_from};
use crate::transforms::{generate_blockwise_mask, sample_augmentation, AugmentSpec, MaskPattern};
use ndarray::{Array2, Axis};
use std::collections::HashMap;

/// Jointly trained encoder of semantic targets.
#[derive(Debug, Clone)]
pub enum SemanticEncoder {
    None,
    Category(CategoryTable),
    Text(TextEncoder),
}

impl SemanticEncoder {
    fn build(
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
        cfg: &TargetEncoderConfig,
        embed_dim: usize,
    ) -> SemanticEncoder {
        match cfg.kind {
            TargetEncoderKind::CategoryTable => {
                SemanticEncoder::Category(CategoryTable::new(store, rng, "cat", cfg.num_classes, embed_dim))
            }
            TargetEncoderKind::TextEncoder => SemanticEncoder::Text(TextEncoder::new(
                store,
                rng,
                "text",
                cfg.vocab_size,
                cfg.text_dim,
                cfg.text_depth,
                4,
                embed_dim,
            )),
            _ => SemanticEncoder::None,
        }
    }

    /// Candidate matrix and the positive index of every sample.
    pub fn candidates(
        &self,
        g: &mut Graph,
        w: &Weights,
        categories: &[usize],
        captions: &[Vec<u32>],
    ) -> Result<(NodeId, Vec<usize>)> {
        match self {
            SemanticEncoder::Category(t) => {
                if let Some(&c) = categories.iter().find(|&&c| c >= t.num_classes) {
                    return Err(Error::KindMismatch(format!("class {c} outside table of {}", t.num_classes)));
                }
                Ok((t.all(g, w), categories.to_vec()))
            }
            SemanticEncoder::Text(te) => {
                let mut unique: Vec<&[u32]> = Vec::new();
                let mut index: HashMap<&[u32], usize> = HashMap::new();
                let mut positives = Vec::with_capacity(captions.len());
                for c in captions {
                    let k = *index.entry(c.as_slice()).or_insert_with(|| {
                        unique.push(c.as_slice());
                        unique.len() - 1
                    });
                    positives.push(k);
                }
                Ok((te.forward(g, w, &unique)?, positives))
            }
            SemanticEncoder::None => Err(Error::KindMismatch("method has no semantic target encoder".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Branches {
    Single {
        dense: Option<DenseDecoder>,
        pool: Option<AttentionPool>,
        semantic: SemanticEncoder,
    },
    M3i {
        dec_i: DenseDecoder,
        dec_j: DenseDecoder,
        pool_i: AttentionPool,
        pool_j: AttentionPool,
        semantic: SemanticEncoder,
    },
}

/// All parameters and modules of one method.
#[derive(Debug, Clone)]
pub struct Model {
    pub method: MethodConfig,
    pub params: ParamStore,
    pub momentum: Option<ParamStore>,
    pub encoder: VitEncoder,
    pub global_proj: Linear,
    pub branches: Branches,
}

impl Model {
    pub fn new(method: &MethodConfig, seed: u64) -> Result<Model> {
        let problems: Vec<String> = validate_method(method)
            .into_iter()
            .filter(|v| !v.starts_with("warning:"))
            .collect();
        if !problems.is_empty() {
            return Err(Error::ConfigInvalid(format!("{}: {}", method.name, problems.join("; "))));
        }
        let mut store = ParamStore::new();
        let mut rng = rng_from(&[seed, 0x1417]);
        let enc_cfg = &method.encoder;
        let encoder = VitEncoder::new(&mut store, &mut rng, enc_cfg, "enc");
        let global_proj = Linear::new(&mut store, &mut rng, "global_proj", enc_cfg.dim, method.embed_dim);
        let d = enc_cfg.dim;
        let branches = match &method.m3i {
            Some(m) => Branches::M3i {
                dec_i: DenseDecoder::new(&mut store, &mut rng, "dec_i", &method.decoder, d, method.target_dim()),
                dec_j: DenseDecoder::new(&mut store, &mut rng, "dec_j", &method.decoder, d, method.target_dim()),
                pool_i: AttentionPool::new(&mut store, &mut rng, "pool_i", d, enc_cfg.heads, method.embed_dim),
                pool_j: AttentionPool::new(&mut store, &mut rng, "pool_j", d, enc_cfg.heads, method.embed_dim),
                semantic: SemanticEncoder::build(&mut store, &mut rng, &m.semantic_encoder, method.embed_dim),
            },
            None => {
                let dense = method.target_repr.is_dense().then(|| {
                    DenseDecoder::new(&mut store, &mut rng, "dec", &method.decoder, d, method.target_dim())
                });
                let pool = (!method.target_repr.is_dense())
                    .then(|| AttentionPool::new(&mut store, &mut rng, "pool", d, enc_cfg.heads, method.embed_dim));
                let semantic = SemanticEncoder::build(&mut store, &mut rng, &method.target_encoder, method.embed_dim);
                Branches::Single { dense, pool, semantic }
            }
        };
        let momentum = (method.target_encoder.kind == TargetEncoderKind::Momentum).then(|| store.clone());
        Ok(Model {
            method: method.clone(),
            params: store,
            momentum,
            encoder,
            global_proj,
            branches,
        })
    }

    /// Projected mean-pooled features, one row per sample of `enc`.
    pub fn global_from(&self, g: &mut Graph, w: &Weights, enc: &Encoded) -> NodeId {
        let pooled: Vec<NodeId> = (0..enc.batch())
            .map(|b| {
                let r = enc.rows(g, b);
                g.mean_rows(r)
            })
            .collect();
        let pooled = g.concat_rows(&pooled);
        self.global_proj.forward(g, w, pooled)
    }

    /// Frozen global features of full images, computed in chunks.
    pub fn global_features(&self, images: &[&Image]) -> Result<Array2<f64>> {
        let mut rows = Vec::new();
        for chunk in images.chunks(64) {
            let mut g = Graph::new();
            let w = Weights::Frozen(&self.params);
            let enc = self.encoder.forward(&mut g, &w, chunk, None)?;
            let gl = self.global_from(&mut g, &w, &enc);
            rows.push(g.value(gl).clone());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    /// Weights producing detached feature targets, if this method has any.
    fn detached_weights(&self) -> Option<Weights<'_>> {
        match self.method.target_encoder.kind {
            TargetEncoderKind::Momentum => self.momentum.as_ref().map(Weights::Frozen),
            TargetEncoderKind::Shared if self.method.regularizer.mechanism == Mechanism::StopGradient => {
                Some(Weights::Frozen(&self.params))
            }
            _ => None,
        }
    }

    /// Target values that carry no gradient: raw pixels, momentum features
    /// and stop-gradient features of the shared encoder.
    pub fn detached_targets(&self, targets: &[&Image]) -> Result<DetachedTargets> {
        let m = &self.method;
        let p = m.encoder.patch_size;
        match m.target_repr {
            ReprKind::DensePixels => {
                let rows: Vec<Array2<f64>> = targets.iter().map(|t| patchify(t, p)).collect();
                let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
                Ok(DetachedTargets {
                    dense: Some(ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?),
                    global: None,
                })
            }
            ReprKind::DenseFeature | ReprKind::GlobalFeature => match self.detached_weights() {
                Some(w) => {
                    let mut g = Graph::new();
                    let enc = self.encoder.forward(&mut g, &w, targets, None)?;
                    if m.target_repr == ReprKind::DenseFeature {
                        Ok(DetachedTargets {
                            dense: Some(g.value(enc.out).clone()),
                            global: None,
                        })
                    } else {
                        let gl = self.global_from(&mut g, &w, &enc);
                        Ok(DetachedTargets {
                            dense: None,
                            global: Some(g.value(gl).clone()),
                        })
                    }
                }
                None => Ok(DetachedTargets::default()),
            },
            _ => Ok(DetachedTargets::default()),
        }
    }

    /// Builds the loss graph of a single-target method. Returns the loss
    /// and the encoder output node.
    pub fn single_loss(&self, g: &mut Graph, batch: &SingleBatch, det: &DetachedTargets) -> Result<(NodeId, NodeId)> {
        let Branches::Single { dense, pool, semantic } = &self.branches else {
            return Err(Error::ConfigInvalid("combined method uses the multi-target loss".into()));
        };
        let m = &self.method;
        let w = Weights::Train(&self.params);
        let n = batch.len();
        let inputs: Vec<&Image> = batch.inputs.iter().map(|v| &v.pixels).collect();
        let keep: Vec<Vec<usize>> = batch.masks.iter().map(|mk| mk.visible_positions()).collect();
        let enc = self.encoder.forward(g, &w, &inputs, Some(&keep))?;
        let (gh, gw) = enc.grid;
        let cells = gh * gw;
        let targets: Vec<&Image> = batch.targets.iter().map(|v| &v.pixels).collect();

        let loss = match m.target_repr {
            ReprKind::DensePixels | ReprKind::DenseFeature => {
                let dec = dense.as_ref().expect("dense decoder");
                let intra = m.input_transform.is_intra_view();
                let mut requests = Vec::with_capacity(n);
                for b in 0..n {
                    let plan = if intra {
                        DecodePlan::Aligned { grid_len: cells, gw }
                    } else {
                        DecodePlan::Cross {
                            coords: target_coords_in_input_frame(
                                &batch.inputs[b].descriptor,
                                &batch.targets[b].descriptor,
                                m.encoder.patch_size,
                            )?,
                        }
                    };
                    requests.push(DecodeRequest {
                        context: enc.rows(g, b),
                        context_positions: enc.positions[b].clone(),
                        plan,
                    });
                }
                let (pred, _) = dec.forward(g, &w, &requests);
                let target = match &det.dense {
                    Some(t) => g.constant(t.clone()),
                    None => {
                        let te = self.encoder.forward(g, &w, &targets, None)?;
                        te.out
                    }
                };
                let mut idx = Vec::new();
                for b in 0..n {
                    if intra && m.input_transform.is_masked() && m.loss_on_masked_only {
                        idx.extend(batch.masks[b].masked_positions().into_iter().map(|c| b * cells + c));
                    } else {
                        idx.extend((0..cells).map(|c| b * cells + c));
                    }
                }
                let p = g.gather_rows(pred, &idx);
                match m.head.family {
                    HeadFamily::Gaussian => {
                        let t = g.gather_rows(target, &idx);
                        gaussian_nll_node(g, p, t, m.head.sigma, true)?
                    }
                    HeadFamily::Boltzmann => boltzmann_nll_node(g, p, target, &idx, &m.head)?,
                }
            }
            ReprKind::GlobalFeature => {
                let pool = pool.as_ref().expect("pool");
                let ranges = ranges_of(&enc);
                let pred = pool.forward(g, &w, enc.out, &ranges);
                let target = match &det.global {
                    Some(t) => g.constant(t.clone()),
                    None => {
                        let te = self.encoder.forward(g, &w, &targets, None)?;
                        self.global_from(g, &w, &te)
                    }
                };
                match (m.head.family, m.regularizer.mechanism) {
                    (HeadFamily::Gaussian, mech) => {
                        let l = gaussian_nll_node(g, pred, target, m.head.sigma, false)?;
                        if mech == Mechanism::Decorrelation {
                            let pen = decorrelation_node(g, target)?;
                            let pen = g.scale(pen, m.regularizer.decorrelation_weight);
                            g.add(l, pen)
                        } else {
                            l
                        }
                    }
                    (HeadFamily::Boltzmann, Mechanism::Negatives) => {
                        let (uniq, positives) = dedup_ids(&batch.ids);
                        let cands = if uniq.len() == n { target } else { g.gather_rows(target, &uniq) };
                        boltzmann_nll_node(g, pred, cands, &positives, &m.head)?
                    }
                    (HeadFamily::Boltzmann, _) => sphere_boltzmann_nll_node(g, pred, target, m.head.tau)?,
                }
            }
            ReprKind::CategoryEmbedding | ReprKind::TextEmbedding => {
                let pool = pool.as_ref().expect("pool");
                let ranges = ranges_of(&enc);
                let pred = pool.forward(g, &w, enc.out, &ranges);
                let (cands, positives) = semantic.candidates(g, &w, &batch.categories, &batch.captions)?;
                boltzmann_nll_node(g, pred, cands, &positives, &m.head)?
            }
        };
        Ok((loss, enc.out))
    }
}

/// Row ranges of every sample in an encoder output.
pub fn ranges_of(enc: &Encoded) -> Vec<(usize, usize)> {
    (0..enc.batch()).map(|b| (enc.offsets[b], enc.len(b))).collect()
}

/// First-occurrence rows of each distinct id and every sample's index into them.
fn dedup_ids(ids: &[u64]) -> (Vec<usize>, Vec<usize>) {
    let mut first: HashMap<u64, usize> = HashMap::new();
    let mut uniq = Vec::new();
    let positives = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            *first.entry(*id).or_insert_with(|| {
                uniq.push(i);
                uniq.len() - 1
            })
        })
        .collect();
    (uniq, positives)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetachedTargets {
    pub dense: Option<Array2<f64>>,
    pub global: Option<Array2<f64>>,
}

/// Views, masks and semantic targets of one single-target training batch.
#[derive(Debug, Clone)]
pub struct SingleBatch {
    pub ids: Vec<u64>,
    pub inputs: Vec<ViewRecord>,
    pub masks: Vec<MaskPattern>,
    pub targets: Vec<ViewRecord>,
    pub categories: Vec<usize>,
    pub captions: Vec<Vec<u32>>,
}

impl SingleBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Augmentation of `sample` whose crop overlaps `anchor`'s crop.
pub fn overlapping_augmentation(sample: &Sample, spec: &AugmentSpec, seed: u64, anchor: &ViewRecord) -> Result<ViewRecord> {
    let a = anchor.descriptor.crop_box.expect("image view");
    for attempt in 0..64u64 {
        let v = sample_augmentation(sample, spec, derive_seed(&[seed, attempt]))?;
        if v.descriptor.crop_box.expect("image view").intersection_area(&a) > 0 {
            return Ok(v);
        }
    }
    Err(Error::GeometryMismatch(format!(
        "no overlapping second view for sample {} within 64 draws",
        sample.id
    )))
}

/// Draws the views, masks and semantic targets a single-target method
/// needs. Each sample's randomness comes from `(seed, sample id)`.
pub fn build_single_batch(samples: &[Sample], cfg: &MethodConfig, spec: &AugmentSpec, seed: u64) -> Result<SingleBatch> {
    validate_batch(samples, cfg)?;
    let (gh, gw) = cfg.encoder.grid();
    let p = cfg.encoder.patch_size;
    let mut out = SingleBatch {
        ids: Vec::with_capacity(samples.len()),
        inputs: Vec::with_capacity(samples.len()),
        masks: Vec::with_capacity(samples.len()),
        targets: Vec::with_capacity(samples.len()),
        categories: vec![],
        captions: vec![],
    };
    for s in samples {
        let sseed = derive_seed(&[seed, s.id]);
        let view1 = sample_augmentation(s, spec, derive_seed(&[sseed, 1]))?;
        let mut input = if cfg.input_transform.is_intra_view() {
            view1.clone()
        } else {
            overlapping_augmentation(s, spec, derive_seed(&[sseed, 2]), &view1)?
        };
        let mask = if cfg.input_transform.is_masked() {
            let mseed = derive_seed(&[sseed, 3]);
            input.descriptor.kind = TransformKind::AugmentMasked;
            input.descriptor.mask_ref = Some(mseed);
            generate_blockwise_mask(gh, gw, cfg.mask_ratio, p, mseed)
        } else {
            MaskPattern::all_visible(gh, gw, p)
        };
        out.ids.push(s.id);
        out.inputs.push(input);
        out.masks.push(mask);
        out.targets.push(view1);
        match cfg.target_transform {
            TargetTransform::Category => out.categories.push(s.category.expect("validated")),
            TargetTransform::Text => out.captions.push(s.caption.clone().expect("validated")),
            TargetTransform::View1 => {}
        }
    }
    if matches!(cfg.input_transform, InputTransform::View1) && cfg.mask_ratio > 0.0 {
        return Err(Error::ConfigInvalid("unmasked input with a mask ratio".into()));
    }
    Ok(out)
}
