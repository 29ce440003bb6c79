//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants map onto the process
//! exit codes used by the `orchestra` binary: configuration and schema
//! problems exit 2, numerical aborts exit 3, I/O failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // ---- numerics ----
    #[error("all indices are masked")]
    AllMasked,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("zero-norm vector in {0}")]
    ZeroVector(&'static str),
    #[error("gumbel temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("loss term '{term}' is non-finite ({context})")]
    NonFiniteLoss { term: &'static str, context: String },
    #[error("non-finite gradient for prompt '{0}'")]
    NonFiniteGradient(String),

    // ---- experts / tasks ----
    #[error("prompt text is empty")]
    EmptyText,
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    // ---- orchestrator ----
    #[error("masking expert {0} would leave fewer than 2 experts")]
    TooFewExperts(usize),

    // ---- stats ----
    #[error("constant input; rank statistic undefined")]
    ConstantInput,
    #[error("all differences are zero")]
    AllZero,
    #[error("sample variance is zero")]
    ZeroVariance,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("total mass must be positive")]
    ZeroMass,

    // ---- config / persistence ----
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code contract: 0 success, 2 config error, 3 numerical abort,
    /// 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema { .. } => 2,
            Error::Io(_) | Error::Checkpoint(_) => 4,
            _ => 3,
        }
    }
}
