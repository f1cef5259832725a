//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid initial data spec: {0}")]
    InvalidSpec(String),

    #[error("invalid normalization: integral of g is {integral}, expected 1 within {tolerance} (pass normalize_g to renormalize)")]
    InvalidNormalization { integral: f64, tolerance: f64 },

    #[error("solver failed to converge after {iterations} iterations (relative residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("fixed-charge guard violated: m = {m:e} fell below e^-(K-1) = {guard:e} (Bouchut lower bound {c_g:e})")]
    GuardViolation { m: f64, guard: f64, c_g: f64 },

    #[error("more than {max_percent}% of particle mass outside the box ({fraction:e})")]
    Truncation { fraction: f64, max_percent: f64 },

    #[error("ensembles have mismatched sizes: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("coupling mismatch: {0}")]
    CouplingMismatch(String),

    #[error("exact transport solver capped at N = {cap}; got N = {n} (use w2_entropic)")]
    ExactCapExceeded { n: usize, cap: usize },

    #[error("snapshot times are not synchronized: {0} vs {1}")]
    UnsynchronizedSnapshots(f64, f64),

    #[error("cached field is stale; re-deposit and re-solve before computing diagnostics")]
    StaleState,

    #[error("history is empty")]
    EmptyHistory,

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("step failed at t = {time}: {source}")]
    StepFailure {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {msg}")]
    Format { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
