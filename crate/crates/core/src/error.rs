use std::path::PathBuf;

use thiserror::Error;

/// Every failure the crate reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate eye: corner distance {0:e} below 1e-9")]
    DegenerateEye(f64),

    #[error("dataset error in {file} (frame {frame:?}): {rule}")]
    Dataset {
        file: String,
        frame: Option<usize>,
        rule: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn dataset(file: impl Into<String>, frame: Option<usize>, rule: impl Into<String>) -> Self {
        Error::Dataset {
            file: file.into(),
            frame,
            rule: rule.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs (files, configs, arguments) rather
    /// than failures while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dataset { .. } | Error::Config(_) | Error::Checkpoint(_) | Error::Domain(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
