//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: unknown flags, invalid field values, missing keys.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed numeric input, e.g. a non-finite action.
    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// Degenerate geometry (coincident waypoints and the like).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Tensor/vector dimension mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A training run was refused because its data preconditions failed.
    #[error("training refused: {0}")]
    Refused(String),

    /// A data file failed to parse; carries the 1-based line number.
    #[error("data error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Checkpoint or dataset content is inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A run started but could not finish.
    #[error("run failure: {0}")]
    Run(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code contract: 0 success, 1 usage, 2 data error, 3 run failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MalformedInput(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Shape(_) => 2,
            Error::Geometry(_) | Error::Refused(_) | Error::Run(_) | Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
