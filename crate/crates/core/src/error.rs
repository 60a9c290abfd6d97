use alloc::string::String;
use alloc::vec::Vec;

use crate::features::TensorKind;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("negative attention weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("attention row sums to zero")]
    ZeroAttention,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("need at least {min} samples, got {actual}")]
    TooFewSamples { min: usize, actual: usize },

    #[error("correlation undefined: input has zero rank variance")]
    ConstantInput,

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("design matrix is rank deficient; linearly dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("missing tensor for image `{image}` layer {layer} ({kind})")]
    MissingTensor {
        image: String,
        layer: usize,
        kind: TensorKind,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
