//! From-scratch 1D CNN: valid convolution with ReLU, max pooling, dense
//! layers, inverted dropout, softmax cross-entropy and Adam.
//!
//! Every layer is generic over [`Real`]. Training runs in `f32`; the
//! gradient checks run the same code in `f64`.

mod adam;
mod checkpoint;
mod conv;
mod dense;
mod dropout;
mod loss;
mod model;
mod pool;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use conv::{Conv1d, Conv1dGrads};
pub use dense::{Dense, DenseGrads};
pub use dropout::Dropout;
pub use loss::{softmax, softmax_cross_entropy};
pub use model::{build_model, out_length, ArchSpec, ConvBlock, Layer, Mode, Model};
pub use pool::MaxPool1d;
pub use tensor::{Real, Tensor3};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{layer}: expected input {expected}, got {actual}")]
    Shape {
        layer: String,
        expected: String,
        actual: String,
    },
    #[error("{layer}: input length {length} is shorter than window {window}")]
    TooShort {
        layer: String,
        length: usize,
        window: usize,
    },
    #[error("{layer}: backward called before forward")]
    NoForwardCache { layer: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonFiniteGradient { tensor: usize },
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err<T>(layer: &str, expected: impl ToString, actual: impl ToString) -> Result<T> {
    Err(NnError::Shape {
        layer: layer.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    })
}
