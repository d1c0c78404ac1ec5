//! Crate-wide error type. One enum, no trait-object boxing: callers can
//! match on the failure class, and tests can assert the exact variant.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Incompatible operand shapes; names the op and both shapes.
    Dim {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A documented precondition was violated (non-scalar loss, empty
    /// aspect, patience > max_epochs, ...).
    Contract(String),
    /// masked_softmax over a mask with no true position.
    DegenerateMask,
    /// grad_check observed two forward passes that disagree.
    Determinism(String),
    /// cleanup over an empty memory.
    EmptyStore,
    /// Token index outside the embedding table.
    Vocab { index: usize, size: usize },
    /// Malformed input file content, with 1-based line number.
    Parse { line: usize, msg: String },
    /// Unrecognized polarity label, with 1-based line number.
    Label { line: usize, label: String },
    /// Dataset-level failure (empty split, empty corpus after filtering).
    Data(String),
    /// Invalid configuration value.
    Config(String),
    /// Dev split larger than the corpus it is drawn from.
    Size { requested: usize, available: usize },
    /// Operation unsupported by the model variant (e.g. attention dump
    /// on a variant without an attention layer).
    Capability(String),
    /// Checkpoint container invalid or inconsistent with the config.
    Checkpoint(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim { op, left, right } => {
                write!(f, "{op}: dimension mismatch {left:?} vs {right:?}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::DegenerateMask => write!(f, "masked softmax: every position is masked"),
            Error::Determinism(msg) => write!(f, "non-deterministic forward: {msg}"),
            Error::EmptyStore => write!(f, "cleanup memory is empty"),
            Error::Vocab { index, size } => {
                write!(f, "token index {index} out of range for vocabulary of {size}")
            }
            Error::Parse { line, msg } => write!(f, "line {line}: {msg}"),
            Error::Label { line, label } => write!(f, "line {line}: unknown label {label:?}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Size { requested, available } => {
                write!(f, "requested {requested} items from a set of {available}")
            }
            Error::Capability(msg) => write!(f, "unsupported for this variant: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
