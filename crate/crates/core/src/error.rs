//! Crate-wide error type.
//!
//! Every fallible operation in the crate reports through [`Error`] so callers
//! (notably the CLI) can map failures onto exit codes without string
//! matching. Variants are grouped roughly by pipeline stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // --- audio I/O ---
    /// The file is not a parseable RIFF/WAVE container.
    #[error("malformed wav {path}: {detail}")]
    MalformedWav { path: String, detail: String },

    /// The container parsed but uses an encoding we do not read.
    #[error("unsupported wav encoding in {path}: {detail}")]
    UnsupportedWav { path: String, detail: String },

    /// The file decodes to zero samples.
    #[error("wav {path} contains no samples")]
    EmptyWav { path: String },

    // --- manifest ---
    #[error("manifest {path} line {line}: expected at least {expected} columns, found {found}")]
    ManifestColumns {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("manifest {path} line {line}: unknown scene label {label:?}")]
    UnknownScene {
        path: String,
        line: usize,
        label: String,
    },

    #[error("manifest {path} line {line}: unknown split {split:?}")]
    UnknownSplit {
        path: String,
        line: usize,
        split: String,
    },

    #[error("manifest {path}: duplicate clip path {clip:?}")]
    DuplicateClip { path: String, clip: String },

    // --- features / tensors ---
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{context}: input too short ({len} samples, need at least {need})")]
    TooShort {
        context: String,
        len: usize,
        need: usize,
    },

    #[error("feature cache {path}: {detail}")]
    FeatureCache { path: String, detail: String },

    // --- training / numerics ---
    #[error("label row {row} sums to {sum}, expected 1 within 1e-6")]
    LabelSum { row: usize, sum: f64 },

    #[error("non-finite {what} at step {step} (lr {lr}); aborting")]
    NonFinite { what: String, step: usize, lr: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // --- scores / fusion ---
    #[error("score table {path} line {line}: {detail}")]
    ScoreTable {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("score tables disagree: {detail}")]
    ScoreMismatch { detail: String },

    // --- augmentation ---
    #[error("cannot mix clips from different scenes ({a:?} vs {b:?})")]
    SceneMismatch { a: String, b: String },

    // --- checkpoints ---
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for [`Error::InvalidConfig`].
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
