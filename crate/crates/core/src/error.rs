use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, length, finiteness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input is well-formed but numerically degenerate (zero norm, zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Missing or corrupt model asset (checkpoint, vocabulary, model card, context file).
    #[error("asset error ({path}): {message}")]
    Asset { path: PathBuf, message: String },

    #[error("unknown attribute `{name}`; registered: {}", registered.join(", "))]
    UnknownAttribute { name: String, registered: Vec<String> },

    #[error("attribute `{0}` is already registered (pass overwrite to replace it)")]
    Conflict(String),

    /// Manifest/vote-file ingestion failures, one entry per offending row.
    #[error("ingestion failed for {source_name}:\n  {}", problems.join("\n  "))]
    Ingestion {
        source_name: String,
        problems: Vec<String>,
    },

    #[error(
        "stale score cache at {dir}: cache was built for backbone {cached}, current backbone is {current}; \
         purge it with `lookfeel cache purge --dir {dir}` or delete the directory"
    )]
    StaleCache {
        dir: PathBuf,
        cached: String,
        current: String,
    },

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Divergence {
        iteration: usize,
        loss: f64,
        /// Last context whose loss was finite.
        last_good: Box<crate::tuner::LearnableContext>,
    },

    #[error("operation not supported by this encoder: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn asset(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Asset {
            path: path.into(),
            message: message.into(),
        }
    }
}
