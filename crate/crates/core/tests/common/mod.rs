#![allow(dead_code)]

use m3i_core::autograd::{Gradients, Graph};
use m3i_core::harness::data::generate_shapes;
use m3i_core::harness::{Dataset, RunConfig};
use m3i_core::m3i::{build_m3i_batch, compute_m3i_loss, cyclic_pairs, detached_m3i_targets, M3iBatch};
use m3i_core::pipeline::{build_single_batch, DetachedTargets, Model, SingleBatch};
use m3i_core::MethodConfig;

/// Run config for a model small enough to finite-difference.
pub fn tiny_run(method: &str) -> RunConfig {
    let mut run = RunConfig {
        method: method.into(),
        batch_size: 2,
        ..RunConfig::default()
    };
    run.data.resolution = 16;
    run.data.train_size = 8;
    run.data.val_size = 4;
    run.augment.out_resolution = (16, 16);
    let m = &mut run.model;
    m.patch_size = Some(4);
    m.dim = Some(8);
    m.depth = Some(1);
    m.heads = Some(2);
    m.decoder_dim = Some(8);
    m.decoder_depth = Some(1);
    m.decoder_heads = Some(2);
    m.embed_dim = Some(6);
    run
}

pub fn tiny_data(run: &RunConfig) -> Dataset {
    generate_shapes(&run.data).expect("dataset")
}

/// One fixed micro-batch with its detached targets.
pub enum Prepared {
    Single(SingleBatch, DetachedTargets),
    M3i(M3iBatch, (DetachedTargets, DetachedTargets), f64),
}

pub fn prepare(model: &Model, run: &RunConfig, data: &Dataset, seed: u64) -> Prepared {
    let samples = &data.train[..2];
    let cfg: &MethodConfig = &model.method;
    if cfg.m3i.is_some() {
        let batch = build_m3i_batch(&cyclic_pairs(samples), cfg, &run.augment, seed).expect("batch");
        let det = detached_m3i_targets(model, &batch).expect("targets");
        Prepared::M3i(batch, det, 0.7)
    } else {
        let batch = build_single_batch(samples, cfg, &run.augment, seed).expect("batch");
        let targets: Vec<_> = batch.targets.iter().map(|v| &v.pixels).collect();
        let det = model.detached_targets(&targets).expect("targets");
        Prepared::Single(batch, det)
    }
}

pub fn loss_value(model: &Model, p: &Prepared) -> f64 {
    let mut g = Graph::new();
    let node = match p {
        Prepared::Single(b, d) => model.single_loss(&mut g, b, d).expect("loss").0,
        Prepared::M3i(b, d, l) => compute_m3i_loss(model, &mut g, b, d, *l).expect("loss").total,
    };
    g.scalar(node)
}

pub fn loss_and_grads(model: &Model, p: &Prepared) -> (f64, Gradients) {
    let mut g = Graph::new();
    let node = match p {
        Prepared::Single(b, d) => model.single_loss(&mut g, b, d).expect("loss").0,
        Prepared::M3i(b, d, l) => compute_m3i_loss(model, &mut g, b, d, *l).expect("loss").total,
    };
    (g.scalar(node), g.backward(node))
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

pub const FD_STEP: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients with a five-point central difference on a
/// spread of entries from every parameter tensor.
pub fn gradient_check(method: &str, seed: u64, per_tensor: usize) -> GradReport {
    let run = tiny_run(method);
    let data = tiny_data(&run);
    let cfg = run.method_config().expect("config");
    let mut model = Model::new(&cfg, seed).expect("model");
    let prepared = prepare(&model, &run, &data, seed);
    let (_, grads) = loss_and_grads(&model, &prepared);
    let ids: Vec<_> = model.params.ids().collect();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for id in ids {
        let len = model.params.get(id).len();
        let analytic: Vec<f64> = match grads.param(id) {
            Some(g) => g.iter().copied().collect(),
            None => vec![0.0; len],
        };
        let mut picks: Vec<usize> = (0..per_tensor.min(len)).map(|k| k * len / per_tensor.min(len)).collect();
        let argmax = (0..len).max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs())).unwrap_or(0);
        if !picks.contains(&argmax) {
            picks.push(argmax);
        }
        for i in picks {
            let original = model.params.get(id).as_slice().expect("contiguous")[i];
            let mut at = |delta: f64| {
                model.params.get_mut(id).as_slice_mut().expect("contiguous")[i] = original + delta;
                loss_value(&model, &prepared)
            };
            let h = FD_STEP;
            let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            model.params.get_mut(id).as_slice_mut().expect("contiguous")[i] = original;
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{}[{i}] analytic {a:.6e} numeric {numeric:.6e}", model.params.name(id));
            }
        }
    }
    report
}
