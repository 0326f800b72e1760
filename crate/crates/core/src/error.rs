use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),

    #[error("unsupported noise pattern for this operation: {0}")]
    UnsupportedPattern(&'static str),

    #[error("rescaling infeasible: {0}")]
    InfeasibleScale(String),

    #[error("cannot rescale a noise-free matrix to a nonzero noise ratio")]
    ZeroNoise,

    #[error("no feasible noise ratio in the requested grid")]
    EmptyFeasibleSet,

    #[error("class {0} has no samples")]
    MissingClass(usize),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("true labels are required but absent")]
    MissingTrueLabels,

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("parse error in {}: line {line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
