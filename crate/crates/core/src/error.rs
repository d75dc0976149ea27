use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("tape error: {0}")]
    TapeError(String),

    #[error("training diverged at iteration {iteration}")]
    TrainingDiverged { iteration: usize },

    #[error("log-density is not finite at the initial point")]
    InvalidInit,

    #[error("sampler stuck: {non_finite} of {total} burn-in proposals were non-finite")]
    SamplerStuck { non_finite: usize, total: usize },

    #[error("invalid Cholesky factor: {0}")]
    InvalidCholesky(String),

    #[error("Cholesky factorization failed at pivot {pivot} (try a larger jitter)")]
    CholeskyFailure { pivot: usize },

    #[error("index {index} is outside a grid of {len} points")]
    IndexError { index: usize, len: usize },

    #[error("solver diverged at step {step} (max |u| = {max_abs:e})")]
    SolverDiverged { step: usize, max_abs: f64 },

    #[error("corpus generation failed for sample {index}: {source}")]
    Corpus {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

/// Attach human-readable context to a fallible result.
pub trait ResultExt<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(context))
    }
}
