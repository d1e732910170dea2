//! Crate-wide error type.

use std::path::PathBuf;

/// Coarse failure category used by callers (notably the CLI) to map errors
/// onto exit codes: configuration/data problems vs. runtime failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad or missing input: paths, file contents, degenerate datasets.
    Data,
    /// Failure while computing: training diverged, numeric domain errors.
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing path: {0}")]
    MissingPath(PathBuf),

    #[error("empty dataset under {0}")]
    EmptyDataset(PathBuf),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown backbone {name:?}; registered: {registered}")]
    UnknownBackbone { name: String, registered: String },

    #[error("weight store {store}: missing checkpoint for {backbone} (expected {expected})")]
    MissingWeights {
        store: PathBuf,
        backbone: String,
        expected: PathBuf,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("training failed: {reason}")]
    Training {
        reason: String,
        /// Per-epoch history up to the last finite epoch, for diagnostics.
        partial_epochs: usize,
    },

    #[error("result file {path}: {reason}")]
    ResultFile { path: PathBuf, reason: String },

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Which exit-code family this error belongs to.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::MissingPath(_)
            | Error::EmptyDataset(_)
            | Error::InvalidInput(_)
            | Error::UnknownBackbone { .. }
            | Error::ResultFile { .. }
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Json { .. } => ErrorCategory::Data,
            Error::MissingWeights { .. }
            | Error::Checkpoint { .. }
            | Error::Training { .. }
            | Error::Stats(_) => ErrorCategory::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
