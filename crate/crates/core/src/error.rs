use thiserror::Error;

/// Failure modes across the whole pipeline. Variants distinguish bad inputs
/// (rejected before any computation) from numerical failures discovered
/// mid-run, so callers can map them to distinct process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model is not ergodic: {0}")]
    NotErgodic(String),

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("eigen-solver failed on {what}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    SolverFailure {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("near-degenerate transfer spectrum: |eta0| = {leading:.12e}, |eta1| = {second:.12e}")]
    DegenerateSpectrum { leading: f64, second: f64 },

    #[error("gauge violation: {0}")]
    Gauge(String),

    #[error("sampler state collapsed: {0}")]
    Renormalization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
