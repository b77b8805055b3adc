use babe::prior::PriorError;
use babe::protocol::ProtocolError;
use babe::sampler::SamplerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("restoration failed in segment(s) {0:?}")]
    Failure(Vec<usize>),
    #[error("denoiser transport: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Failure(_) => 3,
            CliError::Protocol(_) => 4,
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Prior(PriorError::Protocol(p)) => CliError::Protocol(p),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<babe::signal::SignalError> for CliError {
    fn from(e: babe::signal::SignalError) -> Self {
        CliError::Validation(e.to_string())
    }
}
