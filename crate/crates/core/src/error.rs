use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    #[error("label {label} out of range for {len} classes")]
    LabelOutOfRange { label: usize, len: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{kind} token {token} at position {position} is outside vocabulary of size {vocab}")]
    TokenOutOfVocab {
        kind: &'static str,
        position: usize,
        token: usize,
        vocab: usize,
    },

    #[error("input length {x_len} does not match target length {y_len} in transducer mode")]
    LengthMismatch { x_len: usize, y_len: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid task spec: {0}")]
    InvalidTask(String),

    #[error("invalid training config: {0}")]
    InvalidTraining(String),

    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
