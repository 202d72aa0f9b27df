use thiserror::Error;

/// Errors produced by every module of the framework.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sample {sample_id} is missing the `{field}` field required by method `{method}`")]
    MissingTargetField {
        sample_id: u64,
        field: &'static str,
        method: String,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("crop geometry out of bounds: {0}")]
    GeometryOutOfBounds(String),
    #[error("image {height}x{width} is too small for a {min}px crop")]
    ImageTooSmall { height: usize, width: usize, min: usize },
    #[error("gaussian head requires sigma > 0, got {0}")]
    NonPositiveSigma(f64),
    #[error("boltzmann head requires tau > 0, got {0}")]
    NonPositiveTau(f64),
    #[error("boltzmann head has an empty candidate set")]
    EmptyCandidateSet,
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("parameter structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("target kind mismatch: {0}")]
    KindMismatch(String),
    #[error("view geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("pair {0} uses the same sample twice")]
    SamePairedSample(u64),
    #[error("target groups do not partition the target set: {0}")]
    PartitionViolation(String),
    #[error("posterior optimization did not reach the supremum: gap {gap:e} after {steps} steps")]
    OptimizationBudgetExceeded { gap: f64, steps: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NaNLoss { step: u64, detail: String },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("malformed metrics log at line {line}: {detail}")]
    MalformedLog { line: usize, detail: String },
    #[error("disk write failed for {path}: {source}")]
    DiskWriteError {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("plot rendering failed: {0}")]
    Plot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
