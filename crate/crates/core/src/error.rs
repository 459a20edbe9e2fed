use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: String,
        expected: String,
        actual: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("camera does not observe scene plane")]
    SceneNotObserved,
    #[error("degenerate epipolar geometry")]
    DegenerateEpipolar,
    #[error("input size {width}x{height} is not divisible by {divisor}; pad to {padded_width}x{padded_height}")]
    NotDivisible {
        width: usize,
        height: usize,
        divisor: usize,
        padded_width: usize,
        padded_height: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss term not available: {0}")]
    LossTerm(String),
    #[error("no valid locations for similarity loss")]
    NoValidLocations,
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("dataset validation failed: {0}")]
    Dataset(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("corrupt {what}: {detail}")]
    Corrupt { what: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op: op.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
