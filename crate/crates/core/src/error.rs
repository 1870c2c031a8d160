//! Crate-wide error type.
//!
//! Errors are diagnostic values, not control flow: anything that reaches the
//! caller carries enough context (layer index, byte offset, expected vs
//! actual shape) to identify the failure without a debugger.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or parameter vector had the wrong shape for an operation.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A layer's geometry is inconsistent (e.g. conv output size is not an
    /// integer, pool window does not tile the input).
    #[error("layer {layer} ({op}): {message}")]
    LayerGeometry {
        layer: usize,
        op: &'static str,
        message: String,
    },

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// An operation needed a nonzero vector (normalization, power iteration).
    #[error("zero-norm vector in {context}")]
    ZeroNorm { context: String },

    /// Training loss became non-finite; the run cannot continue.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged { epoch: usize, batch: usize },

    /// A path point became non-finite during string relaxation.
    #[error("string relaxation diverged at step {step}, point {point}")]
    StringDiverged { step: usize, point: usize },

    /// Materializing an embedded network would exceed the configured budget.
    #[error(
        "embedded parameter vector needs {required_bytes} bytes, budget is {budget_bytes} bytes"
    )]
    ParamBudget {
        required_bytes: u64,
        budget_bytes: u64,
    },

    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A checkpoint file is malformed or inconsistent with expectations.
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    /// A dataset file is malformed; offset is where parsing stopped.
    #[error("data file {path} at byte {offset}: {message}")]
    DataFormat {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
