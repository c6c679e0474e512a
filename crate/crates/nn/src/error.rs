use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("tensor shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("layer {layer}: expected input extents {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("layer {layer} ({kind}) cannot accept input extents {input:?}: {reason}")]
    InvalidLayer {
        layer: usize,
        kind: &'static str,
        input: Vec<usize>,
        reason: String,
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    Mismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("backward called without retained activations from a training forward pass")]
    NoTrace,

    #[error("non-finite gradient in parameter tensor {index}")]
    NonFiniteGradient { index: usize },

    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),

    #[error("parameter list mismatch: {0}")]
    Parameters(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
