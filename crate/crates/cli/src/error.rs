use forestseg::Error;
use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_PIPELINE: u8 = 4;
pub const EXIT_EXTERNAL: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("pipeline failure: {0}")]
    Pipeline(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Pipeline(_) => EXIT_PIPELINE,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => EXIT_CONFIG,
                Error::Empty(_)
                | Error::LengthMismatch { .. }
                | Error::NonFinite(_)
                | Error::Parse { .. }
                | Error::MissingLabels(_)
                | Error::Dimension { .. }
                | Error::Io { .. }
                | Error::TrialLog(_) => EXIT_DATA,
                Error::Pipeline(_)
                | Error::Factorization(_)
                | Error::Exhausted(_)
                | Error::AllTrialsFailed(_)
                | Error::InsufficientTrials { .. } => EXIT_PIPELINE,
                Error::External(_) => EXIT_EXTERNAL,
            },
        }
    }
}

impl From<forestseg::PipelineFailure> for CliError {
    fn from(f: forestseg::PipelineFailure) -> Self {
        CliError::Core(Error::Pipeline(f))
    }
}
