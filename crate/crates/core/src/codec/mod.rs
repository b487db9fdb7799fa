//! Desk-scale toy codec: patch-PCA transform, uniform quantizer,
//! discretized-Gaussian factorized entropy model and a range coder.

mod bitstream;
pub mod entropy;
pub mod linalg;
mod model;
pub mod range_coder;

pub use bitstream::{
    analytic_bits, decode, encode_block, encode_image, payload_range, per_channel_bits,
    ChannelOrder, Decoded, EncodeOptions, FLAG_PERMUTED, FLAG_SCALAR, MAGIC, VERSION,
};
pub use entropy::SymbolTable;
pub use model::{
    quantize, FitParams, LatentBlock, Latents, ToyCodecModel, BIAS_CHANNEL, LAMBDA_EPS, SIGMA_FLOOR,
};

use thiserror::Error;

use crate::tensor_io::TensorError;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("image must be grayscale")]
    NotGrayscale,
    #[error("too few patches: have {have}, need at least {need}")]
    TooFewPatches { have: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("corrupt bitstream: {0}")]
    Corrupt(String),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("bitstream was encoded with a different model")]
    ModelHashMismatch,
    #[error("bitstream was encoded with a different channel permutation")]
    ManifestHashMismatch,
    #[error("bitstream is permuted but no manifest was supplied")]
    MissingPermutation,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl CodecError {
    /// True for checksum and hash failures.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            CodecError::ChecksumMismatch { .. }
                | CodecError::ModelHashMismatch
                | CodecError::ManifestHashMismatch
        )
    }
}
