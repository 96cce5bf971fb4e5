use alloc::string::String;

use crate::bounds::BoundsError;

/// Errors raised by the simulation, sampling, verification and training
/// stages. Statistical errors are carried through unchanged.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("invalid system spec: {0}")]
    InvalidSpec(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dynamics are not affine in the control")]
    NotControlAffine,
    #[error("state left the inflated domain box at step {step}")]
    NonFiniteState { step: usize },
    #[error("sample {index} exceeded {max_rejections} rejections (acceptance rate so far {acceptance_rate:e})")]
    AcceptanceStarvation {
        index: u64,
        max_rejections: u64,
        acceptance_rate: f64,
    },
    #[error("iteration cap {cap} reached without an outlier-free level")]
    IterationCap { cap: usize },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = core::result::Result<T, Error>;
