use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("duplicate response for respondent {respondent} and image {image} (row {row})")]
    Duplicate {
        row: usize,
        respondent: String,
        image: String,
    },

    #[error("training diverged at iteration {iteration}: loss_d={loss_d}, loss_g={loss_g}")]
    Diverged {
        iteration: u64,
        loss_d: f64,
        loss_g: f64,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for bad input or configuration, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Validation { .. }
            | Error::Duplicate { .. }
            | Error::Format(_)
            | Error::EmptyDataset(_)
            | Error::InsufficientSamples(_)
            | Error::Contract(_) => 1,
            Error::Shape(_)
            | Error::Numeric(_)
            | Error::Io { .. }
            | Error::Corruption(_)
            | Error::Diverged { .. }
            | Error::Image { .. } => 2,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
