use alloc::string::String;

use thiserror::Error;

/// Errors raised by the kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("client {0} has no local data")]
    EmptyShard(u32),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training volume not estimable from a zero gradient or zero update")]
    NotEstimable,
    #[error("every update was dropped; nothing to aggregate")]
    NothingToAggregate,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
