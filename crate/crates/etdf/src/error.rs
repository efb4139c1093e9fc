//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite values encountered in {0}")]
    NonFinite(&'static str),

    #[error("class index {index} out of range for {class_count} classes")]
    ClassIndex { index: usize, class_count: usize },

    #[error("model spec does not compose: {0}")]
    Spec(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// Malformed file content; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("precision mismatch: file stores {file}-byte elements, runtime uses {runtime}-byte elements")]
    PrecisionMismatch { file: u8, runtime: u8 },

    /// The pair-gradient norm fell below the 1e-12 floor; the projection
    /// step of the attack is undefined there.
    #[error("degenerate gradient: pair-gradient norm {norm:e} is below the 1e-12 floor")]
    DegenerateGradient { norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
