//! Error type shared by every module in the crate.

use crate::channel::Split;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on caller-supplied values failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The data admits no well-posed fit (zero variance, rank deficiency, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A sample or model refers to an anchor id the current context lacks.
    #[error("unknown anchor id {0}")]
    UnknownAnchor(u32),

    /// A per-anchor fit found no usable samples for this anchor.
    #[error("anchor {0} has no samples in the fitting split")]
    NoSamplesForAnchor(u32),

    /// An operation needed records from a split the dataset does not contain.
    #[error("dataset has no {0} records")]
    EmptySplit(Split),

    /// A prediction was requested from a model that has not been trained.
    #[error("model has not been trained")]
    UntrainedModel,

    /// A prediction was requested from the wrong network head.
    #[error("head mismatch: model has {actual}, operation needs {expected}")]
    HeadMismatch { expected: String, actual: String },

    /// A numeric routine produced a non-finite value (training divergence,
    /// overflowing inputs). Carries enough context to locate the blow-up.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A persisted file does not match its documented schema.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
