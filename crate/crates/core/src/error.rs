use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Config text could not be parsed.
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// A config value violates an invariant.
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    /// Tensor or image shapes disagree with what the model expects.
    #[error("input error: {0}")]
    Input(String),

    /// Clustering was asked to run on fewer points than clusters.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at step {step}: l_c={l_c} l_d={l_d} l_u={l_u}")]
    NonFinite {
        step: u64,
        l_c: f64,
        l_d: f64,
        l_u: f64,
    },

    #[error("I/O error on {path}: {source}")]
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
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::Validation { .. } => 3,
            Error::Input(_) | Error::Degenerate(_) => 4,
            Error::Dataset(_) | Error::Io { .. } | Error::Image { .. } => 5,
            Error::Checkpoint(_) => 6,
            Error::Metric(_) => 7,
            Error::NonFinite { .. } => 8,
        }
    }
}
