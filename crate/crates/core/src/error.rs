//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. The CLI maps
//! errors onto its exit-code contract through [`Error::class`]: configuration
//! problems exit 2, data problems exit 3, runtime failures exit 4.

use thiserror::Error;

/// Coarse error class used for the CLI exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad flags, bad config file, out-of-range settings.
    Config,
    /// Missing or malformed input data.
    Data,
    /// Failure while computing (non-finite values, factorization failure, IO).
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("pixel {index} is {value}, outside [0,1]")]
    PixelOutOfRange { index: usize, value: f64 },

    #[error("class index {class} out of range (class count {class_count})")]
    ClassOutOfRange { class: usize, class_count: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite gradient during counterfactual search (iteration {iteration})")]
    NonFiniteGradient { iteration: usize },

    #[error("non-finite value produced by {what}")]
    NonFinite { what: &'static str },

    #[error("class {class} has {have} samples, needs at least {need} to fit a Gaussian")]
    GmmClassTooSmall {
        class: usize,
        have: usize,
        need: usize,
    },

    #[error("covariance factorization failed for class {class} after {attempts} jitter retries")]
    GmmFactorization { class: usize, attempts: usize },

    #[error("feature dimension mismatch: model produces {model_dim}, GMM was fitted on {gmm_dim}")]
    FeatureDimMismatch { model_dim: usize, gmm_dim: usize },

    #[error("bad magic at byte {offset}: found {found:#010x}, expected {expected:#010x}")]
    IdxWrongMagic {
        offset: usize,
        found: u32,
        expected: u32,
    },

    #[error("truncated file: needed {needed} bytes at offset {offset}, only {available} available")]
    IdxTruncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("item count mismatch: image file has {images}, label file has {labels}")]
    IdxCountMismatch { images: u32, labels: u32 },

    #[error("label {label} at index {index} is not below class count {class_count}")]
    BadLabel {
        index: usize,
        label: usize,
        class_count: usize,
    },

    #[error("dataset too small: {msg}")]
    DatasetTooSmall { msg: String },

    #[error("checkpoint format error: {msg}")]
    Checkpoint { msg: String },

    #[error("config error on key \"{key}\": {msg}")]
    Config { key: String, msg: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("PGM format error: {msg}")]
    Pgm { msg: String },

    #[error("ledger parse error on line {line}: {msg}")]
    Ledger { line: usize, msg: String },

    #[error("{msg}")]
    Other { msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Which exit-code class this error belongs to.
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config { .. } | ConfigParse(..) => ErrorClass::Config,
            IdxWrongMagic { .. }
            | IdxTruncated { .. }
            | IdxCountMismatch { .. }
            | BadLabel { .. }
            | DatasetTooSmall { .. }
            | PixelOutOfRange { .. }
            | Pgm { .. }
            | Ledger { .. }
            | Checkpoint { .. } => ErrorClass::Data,
            _ => ErrorClass::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
