use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the numerical kernels, the models and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {context}")]
    NonFinite { context: &'static str },

    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("SVD did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("eigenvalue iteration did not converge after {sweeps} sweeps")]
    EigenNoConvergence { sweeps: usize },

    #[error("matrix is not antisymmetric (|A + A^T|_F = {residual:e})")]
    NotAntisymmetric { residual: f64 },

    #[error("matrix is not orthogonal (|S S^T - I|_F = {residual:e})")]
    NotOrthogonal { residual: f64 },

    #[error("matrix is singular or too ill-conditioned (condition {condition:e})")]
    Singular { condition: f64 },

    #[error("operation undefined on the zero matrix")]
    ZeroMatrix,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
