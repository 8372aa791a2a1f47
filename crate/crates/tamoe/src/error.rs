//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: usage errors
//! exit 1, data/contract errors exit 2, numerical failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A scalar argument is outside its valid domain (e.g. tau <= 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid user input (bad flag combination, malformed request).
    #[error("usage error: {0}")]
    Usage(String),

    /// A structured input file failed to parse.
    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A file's declared layout disagrees with its contents.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    /// A dataset or protocol contract was violated (e.g. split overlap).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerical failure: NaN/Inf where finite values are required.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A loss function expected to be deterministic produced two different
    /// values for identical inputs.
    #[error("non-deterministic loss function: {first} vs {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// An error annotated with the experiment stage it came from.
    #[error("in stage '{stage}': {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Exit code for the CLI: 1 usage, 2 data/contract, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numerical(_) | Error::NonDeterministicLoss { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Attach an experiment stage name to any error passing through.
pub fn stage<T>(name: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|e| e.in_stage(name))
}

pub type Result<T> = std::result::Result<T, Error>;
