use std::process::ExitCode;

use iscs_core::codec::CodecError;
use iscs_core::discovery::DiscoveryError;
use iscs_core::evaluation::EvalError;
use iscs_core::grouping::{GroupingError, ManifestBuildError};
use iscs_core::scheduler::ScheduleError;
use iscs_core::tensor_io::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad file, flag or config. Exit code 2.
    #[error("error: {0}")]
    Input(String),
    /// Hash or checksum mismatch. Exit code 3.
    #[error("integrity error: {0}")]
    Integrity(String),
    /// A result failed its own consistency checks. Exit code 4.
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Input(_) => 2,
            CliError::Integrity(_) => 3,
            CliError::Invariant(_) => 4,
        })
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            e if e.is_integrity() => CliError::Integrity(e.to_string()),
            CodecError::Corrupt(_) => CliError::Integrity(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<DiscoveryError> for CliError {
    fn from(e: DiscoveryError) -> Self {
        match e {
            DiscoveryError::Invariant(_) => CliError::Invariant(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<GroupingError> for CliError {
    fn from(e: GroupingError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ManifestBuildError> for CliError {
    fn from(e: ManifestBuildError) -> Self {
        match e {
            ManifestBuildError::Discovery(d) => d.into(),
            ManifestBuildError::Grouping(g) => g.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Codec(c) => c.into(),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Input(e.to_string())
    }
}
