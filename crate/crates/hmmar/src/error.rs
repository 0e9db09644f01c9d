use thiserror::Error;

/// Errors surfaced by model construction, filtering, simulation,
/// stability analysis, and estimation.
#[derive(Debug, Error)]
pub enum HmmError {
    #[error("model is invalid: {0}")]
    InvalidModel(String),

    #[error("transition matrix has no unique invariant measure: {0}")]
    NonErgodicChain(String),

    #[error("operation requires autoregressive order p = 1, model has p = {p}")]
    UnsupportedOrder { p: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("all state densities vanished at step t = {t}")]
    NumericalUnderflow { t: i64 },

    #[error("stability condition violated: {condition} (value {value})")]
    ConditionViolated { condition: String, value: f64 },

    #[error("regime {regime} degenerated: {reason}")]
    DegenerateRegime { regime: usize, reason: String },

    #[error("all {0} restarts failed:\n{1}")]
    AllRestartsFailed(usize, String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, HmmError>;
