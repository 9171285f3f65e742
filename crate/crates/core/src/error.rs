use thiserror::Error;

use crate::trainer::StepRecord;
use crate::volume::Dims;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimsMismatch { left: Dims, right: Dims },

    #[error("data length {len} does not match dims {dims}")]
    LengthMismatch { dims: Dims, len: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid dims {0}: every axis must be positive")]
    ZeroDim(Dims),

    #[error("beta {0} outside [0, 1)")]
    InvalidBeta(f64),

    #[error("grid {0} too small for a cuboid covering at least 20% of its volume")]
    GridTooSmall(Dims),

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("empty {0} set")]
    EmptyDataset(&'static str),

    #[error(
        "non-finite loss at step {} (seg {}, app {}, str {}, lambda {})",
        .0.step, .0.l_seg, .0.l_app, .0.l_str, .0.lambda
    )]
    NonFiniteLoss(StepRecord),
}
