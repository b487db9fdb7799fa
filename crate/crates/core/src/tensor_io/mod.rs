//! Reading and writing model weights and test images.

mod container;
mod image;
mod kernel;

pub use container::{read_tensor_file, write_tensor_file, DType, TensorEntry, TensorFile};
pub use image::{read_image, write_image, Image};
pub use kernel::{extract_kernel_set, insert_kernel_set, ConvKernelSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensor {tensor:?}: {reason}")]
    MalformedEntry { tensor: String, reason: String },
    #[error("tensor {tensor:?}: unknown dtype {dtype:?}")]
    UnknownDtype { tensor: String, dtype: String },
    #[error("tensor {tensor:?}: data ends at byte {end} but payload has {payload} bytes")]
    OutOfBounds {
        tensor: String,
        end: usize,
        payload: usize,
    },
    #[error("tensors {first:?} and {second:?} have overlapping data")]
    Overlap { first: String, second: String },
    #[error("tensor {tensor:?}: shape needs {expected} bytes but offsets span {actual}")]
    SizeMismatch {
        tensor: String,
        expected: usize,
        actual: usize,
    },
    #[error("tensor {0:?}: shape has a zero dimension")]
    ZeroDimension(String),
    #[error("container holds no tensors")]
    NoTensors,
    #[error("tensor {0:?} not found")]
    MissingTensor(String),
    #[error("tensor {tensor:?}: expected rank {expected}, got {actual}")]
    RankMismatch {
        tensor: String,
        expected: usize,
        actual: usize,
    },
    #[error("tensor {tensor:?}: bias length {actual} does not match {expected} output channels")]
    BiasLength {
        tensor: String,
        expected: usize,
        actual: usize,
    },
    #[error("tensor {tensor:?}: non-finite value at element {index}")]
    NonFinite { tensor: String, index: usize },
    #[error("image: {0}")]
    Image(String),
}
