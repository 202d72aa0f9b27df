//! Training loop, resume and checkpoint evaluation.

use super::checkpoint::{Checkpoint, TensorGroup};
use super::config::RunConfig;
use super::data::{generate_shapes, read_dataset, Dataset};
use super::eval::{collapse_report, effective_rank, feature_std, probe_accuracy, CollapseReport, ProbeConfig};
use super::metrics::MetricsRecord;
use super::optim::{ema_coeff_at, AdamW};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::heads::ema_update;
use crate::m3i::{build_m3i_batch, compute_m3i_loss, cyclic_pairs, detached_m3i_targets, update_dynamic_weight, DynamicWeightState};
use crate::methods::MethodConfig;
use crate::model::{Image, Sample};
use crate::nn::ParamStore;
use crate::pipeline::{build_single_batch, Model};
use crate::rng::{derive_seed, rng_from};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Loads the configured dataset or generates it in memory.
pub fn load_data(run: &RunConfig) -> Result<Dataset> {
    match &run.data_dir {
        Some(dir) => {
            let ds = read_dataset(dir)?;
            if ds.spec != run.data {
                return Err(Error::ConfigInvalid(format!(
                    "dataset at {} was generated from a different spec",
                    dir.display()
                )));
            }
            Ok(ds)
        }
        None => generate_shapes(&run.data),
    }
}

/// Row-wise means of consecutive blocks of `lengths` rows.
pub fn pooled_rows(values: &Array2<f64>, lengths: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((lengths.len(), values.ncols()));
    let mut start = 0;
    for (b, &len) in lengths.iter().enumerate() {
        if len > 0 {
            let block = values.slice(ndarray::s![start..start + len, ..]);
            out.row_mut(b).assign(&block.mean_axis(Axis(0)).expect("non-empty"));
        }
        start += len;
    }
    out
}

/// Optimizer, model and weighting state of one run.
pub struct Trainer {
    pub run: RunConfig,
    pub method: MethodConfig,
    pub model: Model,
    pub optim: AdamW,
    pub dynamic: Option<DynamicWeightState>,
    pub step: u64,
    train: Vec<Sample>,
}

impl Trainer {
    pub fn new(run: RunConfig, train: Vec<Sample>) -> Result<Self> {
        run.validate()?;
        let method = run.method_config()?;
        let model = Model::new(&method, derive_seed(&[run.seed, 0x1417]))?;
        let optim = AdamW::new(run.optimizer.clone(), &model.params);
        let dynamic = method.m3i.as_ref().map(|s| DynamicWeightState::new(s.gamma, s.grad_ema));
        Ok(Self {
            run,
            method,
            model,
            optim,
            dynamic,
            step: 0,
            train,
        })
    }

    /// Rebuilds a trainer in the exact state captured by `ckpt`.
    pub fn from_checkpoint(ckpt: &Checkpoint, train: Vec<Sample>) -> Result<Self> {
        let mut t = Trainer::new(ckpt.run.clone(), train)?;
        if t.method != ckpt.method {
            return Err(Error::IncompatibleCheckpoint("method configuration differs".into()));
        }
        load_group(&mut t.model.params, ckpt, TensorGroup::Online)?;
        if let Some(m) = t.model.momentum.as_mut() {
            load_group(m, ckpt, TensorGroup::Momentum)?;
        }
        let (mut ms, mut vs) = (Vec::new(), Vec::new());
        for (name, a) in ckpt.group(TensorGroup::AdamM) {
            let id = t.model.params.find(name).ok_or_else(|| Error::IncompatibleCheckpoint(format!("unknown `{name}`")))?;
            ms.push((id, a.clone()));
        }
        for (name, a) in ckpt.group(TensorGroup::AdamV) {
            let id = t.model.params.find(name).ok_or_else(|| Error::IncompatibleCheckpoint(format!("unknown `{name}`")))?;
            vs.push((id, a.clone()));
        }
        if ms.len() != t.optim.m.len() || vs.len() != t.optim.v.len() {
            return Err(Error::IncompatibleCheckpoint("optimizer state is incomplete".into()));
        }
        for (id, a) in ms {
            t.optim.m[id.0] = a;
        }
        for (id, a) in vs {
            t.optim.v[id.0] = a;
        }
        t.optim.cfg = ckpt.optimizer.clone();
        t.optim.t = ckpt.optimizer_t;
        t.dynamic = ckpt.dynamic;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        let p = &self.model.params;
        for (_, name, a) in p.iter() {
            tensors.push((TensorGroup::Online, name.to_string(), a.clone()));
        }
        if let Some(m) = &self.model.momentum {
            for (_, name, a) in m.iter() {
                tensors.push((TensorGroup::Momentum, name.to_string(), a.clone()));
            }
        }
        for (id, name, _) in p.iter() {
            tensors.push((TensorGroup::AdamM, name.to_string(), self.optim.m[id.0].clone()));
        }
        for (id, name, _) in p.iter() {
            tensors.push((TensorGroup::AdamV, name.to_string(), self.optim.v[id.0].clone()));
        }
        Checkpoint {
            run: self.run.clone(),
            method: self.method.clone(),
            step: self.step,
            dynamic: self.dynamic,
            optimizer: self.optim.cfg.clone(),
            optimizer_t: self.optim.t,
            tensors,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.run.total_steps()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Training-set indices of the batch at `step`; each epoch is a fresh
    /// seeded permutation and the ragged tail is dropped.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let spe = self.run.steps_per_epoch().max(1);
        let epoch = step / spe;
        let k = (step % spe) as usize;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng_from(&[self.run.seed, 0xE90C, epoch]));
        let b = self.run.batch_size;
        order[k * b..(k + 1) * b].to_vec()
    }

    fn check_finite(&self, value: f64, detail: impl FnOnce() -> String) -> Result<()> {
        if value.is_finite() {
            return Ok(());
        }
        let detail = detail();
        let dump = serde_json::json!({
            "step": self.step,
            "method": self.method.name,
            "detail": detail,
            "param_norms": self
                .model
                .params
                .iter()
                .map(|(_, n, a)| (n.to_string(), a.iter().map(|v| v * v).sum::<f64>().sqrt()))
                .collect::<std::collections::BTreeMap<_, _>>(),
        });
        if fs::create_dir_all(&self.run.output_dir).is_ok() {
            let _ = fs::write(self.run.output_dir.join("nan_dump.json"), dump.to_string());
        }
        Err(Error::NaNLoss { step: self.step, detail })
    }

    /// Runs one optimizer step and returns its metrics record.
    pub fn train_step(&mut self) -> Result<MetricsRecord> {
        let step = self.step;
        let total_steps = self.total_steps();
        let samples: Vec<Sample> = self.batch_indices(step).into_iter().map(|i| self.train[i].clone()).collect();
        let seed = derive_seed(&[self.run.seed, step, 0xBA7C]);
        let inject = self.run.nan_inject_step == Some(step);
        let mut g = Graph::new();
        let record;
        let grads;
        if let Some(state) = self.dynamic {
            let pairs = cyclic_pairs(&samples);
            let batch = build_m3i_batch(&pairs, &self.method, &self.run.augment, seed)?;
            let det = detached_m3i_targets(&self.model, &batch)?;
            let mut loss = compute_m3i_loss(&self.model, &mut g, &batch, &det, state.lambda)?;
            if inject {
                loss.ssp_i = g.scale(loss.ssp_i, f64::NAN);
                let rest = g.add(loss.ssp_j, loss.ssp_i);
                let w = g.scale(loss.sp, state.lambda);
                loss.total = g.add(rest, w);
            }
            let bd = loss.breakdown(&g);
            let total = g.scalar(loss.total);
            self.check_finite(total, || format!("combined loss {bd:?}"))?;
            grads = g.backward(loss.total);
            let (gs, gp) = loss.grad_norms(&g);
            let next = update_dynamic_weight(state, gs, gp);
            self.dynamic = Some(next);
            let feats = pooled_rows(g.value(loss.enc_out), &vec![self.method.encoder.grid().0 * self.method.encoder.grid().1; batch.len()]);
            record = MetricsRecord {
                step,
                total,
                ssp_i: Some(bd.ssp_i),
                ssp_j: Some(bd.ssp_j),
                sp_i: Some(bd.sp_i),
                sp_j: Some(bd.sp_j),
                lambda: Some(state.lambda),
                g_ssp_ema: Some(next.g_ssp_ema),
                g_sp_ema: Some(next.g_sp_ema),
                feature_std: feature_std(&feats),
                effective_rank: effective_rank(&feats),
            };
        } else {
            let batch = build_single_batch(&samples, &self.method, &self.run.augment, seed)?;
            let targets: Vec<&Image> = batch.targets.iter().map(|v| &v.pixels).collect();
            let det = self.model.detached_targets(&targets)?;
            let (mut loss, enc_out) = self.model.single_loss(&mut g, &batch, &det)?;
            if inject {
                loss = g.scale(loss, f64::NAN);
            }
            let total = g.scalar(loss);
            self.check_finite(total, || format!("{} loss is {total}", self.method.name))?;
            grads = g.backward(loss);
            let lengths: Vec<usize> = batch.masks.iter().map(|m| m.visible_positions().len()).collect();
            let feats = pooled_rows(g.value(enc_out), &lengths);
            record = MetricsRecord::single(step, total, feature_std(&feats), effective_rank(&feats));
        }
        let lr = self.optim.cfg.lr_at(step, total_steps);
        self.optim.step(&mut self.model.params, &grads, lr);
        if let Some(m) = self.model.momentum.as_mut() {
            let coeff = ema_coeff_at(self.method.target_encoder.ema_coeff, step, total_steps);
            ema_update(m, &self.model.params, coeff)?;
        }
        self.step += 1;
        Ok(record)
    }

    /// Frozen global features and labels of `samples`.
    pub fn features(&self, samples: &[Sample]) -> Result<(Array2<f64>, Vec<usize>)> {
        features_of(&self.model, samples)
    }
}

fn load_group(store: &mut ParamStore, ckpt: &Checkpoint, group: TensorGroup) -> Result<()> {
    let mut seen = 0;
    for (name, a) in ckpt.group(group) {
        let id = store
            .find(name)
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("unknown parameter `{name}`")))?;
        if store.get(id).dim() != a.dim() {
            return Err(Error::IncompatibleCheckpoint(format!("`{name}` has shape {:?}", a.dim())));
        }
        *store.get_mut(id) = a.clone();
        seen += 1;
    }
    if seen != store.len() {
        return Err(Error::IncompatibleCheckpoint(format!("{seen} of {} parameters present", store.len())));
    }
    Ok(())
}

pub fn features_of(model: &Model, samples: &[Sample]) -> Result<(Array2<f64>, Vec<usize>)> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let labels = samples.iter().map(|s| s.category.unwrap_or(0)).collect();
    Ok((model.global_features(&images)?, labels))
}

/// Model held by a checkpoint, with online weights loaded.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(&ckpt.method, 0)?;
    load_group(&mut model.params, ckpt, TensorGroup::Online)?;
    if let Some(m) = model.momentum.as_mut() {
        load_group(m, ckpt, TensorGroup::Momentum)?;
    }
    Ok(model)
}

/// Linear-probe accuracy of `model` trained on `data.train`, tested on
/// `data.val`.
pub fn linear_probe(model: &Model, data: &Dataset, cfg: &ProbeConfig) -> Result<f64> {
    let (tx, ty) = features_of(model, &data.train)?;
    let (vx, vy) = features_of(model, &data.val)?;
    probe_accuracy(&tx, &ty, &vx, &vy, data.spec.num_classes, cfg)
}

/// Collapse diagnostics of `model`'s global features on the val split.
pub fn collapse_on(model: &Model, data: &Dataset) -> Result<CollapseReport> {
    let (vx, _) = features_of(model, &data.val)?;
    Ok(collapse_report(&vx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: u64,
}

fn append_lines(path: &Path, lines: &[String]) -> Result<()> {
    let err = |source| Error::DiskWriteError {
        path: path.display().to_string(),
        source,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
    for l in lines {
        writeln!(f, "{l}").map_err(err)?;
    }
    Ok(())
}

/// Trains `trainer` to completion, appending metrics to
/// `output_dir/metrics.jsonl` and writing checkpoints at the configured
/// cadence plus a final one.
pub fn run_to_end(trainer: &mut Trainer) -> Result<TrainOutcome> {
    let out = trainer.run.output_dir.clone();
    fs::create_dir_all(&out).map_err(|source| Error::DiskWriteError {
        path: out.display().to_string(),
        source,
    })?;
    let metrics = out.join(METRICS_FILE);
    if trainer.step == 0 && metrics.exists() {
        fs::remove_file(&metrics)?;
    }
    let every = trainer.run.checkpoint_every;
    while !trainer.is_done() {
        let rec = trainer.train_step()?;
        append_lines(&metrics, &[rec.to_line()])?;
        if every > 0 && trainer.step.is_multiple_of(every) {
            trainer.checkpoint().save(&out.join(format!("step_{:06}.ckpt", trainer.step)))?;
        }
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        metrics,
        steps: trainer.step,
    })
}

/// Full run from a configuration.
pub fn train(run: RunConfig) -> Result<TrainOutcome> {
    let data = load_data(&run)?;
    let mut t = Trainer::new(run, data.train)?;
    run_to_end(&mut t)
}

/// Continues a run from a checkpoint, writing into the checkpoint's output
/// directory unless `output_dir` is given.
pub fn resume(ckpt_path: &Path, output_dir: Option<PathBuf>) -> Result<TrainOutcome> {
    let mut ckpt = Checkpoint::load(ckpt_path)?;
    if let Some(dir) = output_dir {
        ckpt.run.output_dir = dir;
    }
    let data = load_data(&ckpt.run)?;
    let mut t = Trainer::from_checkpoint(&ckpt, data.train)?;
    run_to_end(&mut t)
}
