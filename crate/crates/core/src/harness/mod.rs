//! Data generation, training loop, checkpoints, metrics and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod plots;
pub mod train;
pub mod vocab;

pub use checkpoint::{Checkpoint, TensorGroup};
pub use config::{RunConfig, OUTPUT_DIR_ENV};
pub use data::{generate_shapes, read_dataset, write_dataset, Dataset, SyntheticShapesSpec};
pub use eval::{collapse_report, effective_rank, feature_std, probe_accuracy, CollapseReport, LinearProbe, ProbeConfig};
pub use metrics::{parse_log, read_log, MetricsRecord};
pub use optim::{AdamW, OptimizerConfig};
pub use plots::{emit_plots, PlotFile};
pub use train::{resume, train, TrainOutcome, Trainer};
