//! Discovery of salient latent channels from encoder weights, channel
//! grouping for slice-parallel entropy coding, and a desk-scale toy codec
//! with ablation and scheduling tools to study them.

pub mod codec;
pub mod discovery;
pub mod evaluation;
pub mod grouping;
pub mod importance;
pub mod scheduler;
pub mod synth;
pub mod tensor_io;

use thiserror::Error;

/// Union of the module errors, for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor_io::TensorError),
    #[error(transparent)]
    Importance(#[from] importance::ImportanceError),
    #[error(transparent)]
    Discovery(#[from] discovery::DiscoveryError),
    #[error(transparent)]
    Grouping(#[from] grouping::GroupingError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Schedule(#[from] scheduler::ScheduleError),
}

impl From<grouping::ManifestBuildError> for Error {
    fn from(e: grouping::ManifestBuildError) -> Self {
        match e {
            grouping::ManifestBuildError::Discovery(d) => Error::Discovery(d),
            grouping::ManifestBuildError::Grouping(g) => Error::Grouping(g),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
