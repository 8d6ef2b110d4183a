//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in feature vector{}", id.as_deref().map(|i| format!(" '{i}'")).unwrap_or_default())]
    NonFiniteFeature { id: Option<String> },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tag '{tag}' has degenerate labels ({positives} positives out of {total}); pi is unidentifiable")]
    DegenerateLabels {
        tag: String,
        positives: usize,
        total: usize,
    },

    #[error("sufficient statistics degenerate (s_alpha = {s_alpha})")]
    DegenerateStats { s_alpha: f64 },

    #[error("non-finite gradient contribution at example {example}")]
    NonFiniteGradient { example: usize },

    #[error("feature file format error at byte {offset}: {message}")]
    FeatureFormat { offset: u64, message: String },

    #[error("bundle file format error: {0}")]
    BundleFormat(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("vocabulary mismatch; unmatched tags: {}", missing.join(", "))]
    VocabMismatch { missing: Vec<String> },

    #[error("no feature vector for image(s): {}", ids.join(", "))]
    MissingFeatures { ids: Vec<String> },

    #[error("empty evaluation input: {0}")]
    EmptyInput(String),

    #[error("cannot split: {0}")]
    Split(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
