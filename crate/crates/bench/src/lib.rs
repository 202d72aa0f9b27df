//! Workloads shared by the benchmarks under `benches/`.

use m3i_core::harness::data::generate_shapes;
use m3i_core::harness::{Dataset, RunConfig, SyntheticShapesSpec, Trainer};
use m3i_core::oracle::{DiscreteJoint, FactorizedModel};
use m3i_core::rng::rng_from;

pub const TRAIN_STEP_METHODS: [&str; 3] = ["mim_pixel", "instance_discrimination", "m3i"];

/// Random factorized joint with every axis support at most `support`.
pub fn oracle_joint(support: usize) -> DiscreteJoint {
    FactorizedModel::random(&mut rng_from(&[1]), support).joint()
}

/// Smooth logits spanning roughly ±4.
pub fn logits(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.37).sin() * 4.0).collect()
}

/// Default-resolution shapes with a small train split.
pub fn shapes(train_size: usize) -> Dataset {
    let spec = SyntheticShapesSpec {
        train_size,
        val_size: 8,
        ..SyntheticShapesSpec::default()
    };
    generate_shapes(&spec).expect("dataset")
}

/// Fresh default-size trainer for `method` on `data`.
pub fn trainer(method: &str, batch_size: usize, data: &Dataset) -> Trainer {
    let run = RunConfig {
        method: method.into(),
        data: data.spec.clone(),
        batch_size,
        ..RunConfig::default()
    };
    Trainer::new(run, data.train.clone()).expect("trainer")
}
