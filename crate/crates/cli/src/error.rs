use std::process::ExitCode;

/// Failure classes with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("training infeasible: {0}")]
    Infeasible(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
            CliError::Infeasible(_) => 5,
        })
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<guardrl::Error> for CliError {
    fn from(e: guardrl::Error) -> Self {
        use guardrl::Error as E;
        match e {
            E::Config(_) | E::InvalidInput(_) => CliError::Config(e.to_string()),
            E::Data(_) | E::Csv(_) | E::Io(_) | E::DimensionMismatch { .. } => CliError::Data(e.to_string()),
            E::Model(_)
            | E::InfeasibleFit { .. }
            | E::UnderDetermined { .. }
            | E::DegenerateBandwidth(_)
            | E::OutOfSupport(_)
            | E::Json(_) => CliError::Model(e.to_string()),
            E::Invariant(_) | E::DivisionByZero(_) => CliError::Internal(e.to_string()),
        }
    }
}
