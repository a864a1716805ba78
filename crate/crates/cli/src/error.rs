use dcrnn::Error;
use thiserror::Error;

/// Exit code for malformed or missing inputs.
pub const EXIT_INPUT: u8 = 2;
/// Exit code for bad configuration or an incompatible checkpoint.
pub const EXIT_CONFIG: u8 = 3;
/// Exit code for numeric failures during fitting or training.
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e {
                Error::CheckpointMismatch(_) => EXIT_CONFIG,
                Error::NonFiniteLoss { .. }
                | Error::NonFiniteGradient(_)
                | Error::Singular(_)
                | Error::ZeroVariance
                | Error::NonScalarLoss { .. }
                | Error::TapeOrder(_) => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            },
        }
    }
}

/// Attaches the offending path to I/O errors, which otherwise carry none.
pub fn with_path(path: &std::path::Path) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(io) => CliError::Input(format!("{}: {io}", path.display())),
        other => CliError::Core(other),
    }
}
