use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Non-finite or out-of-domain scalar input.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Cholesky breakdown at the given pivot.
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}{diagnostics}")]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        diagnostics: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    /// The network handed to a posterior query is not the one it was fitted at.
    #[error("posterior mismatch: {0}")]
    StalePosterior(String),

    /// Best-of-n asked for more samples than the pool holds.
    #[error("best-of-n requires n <= N, got n = {n} with N = {pool_size}")]
    ExceedsPool { n: usize, pool_size: usize },

    #[error("unknown evaluator `{0}`")]
    UnknownEvaluator(String),

    #[error("degenerate pool: evaluator `{0}` has zero spread")]
    DegeneratePool(String),

    #[error("non-finite score in {context}")]
    NonFinite { context: String },

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
