//! One error type for every command, carrying its process exit code.
//!
//! Exit codes: 0 success, 1 verification failure (a check that ran and
//! rejected), 2 usage or precondition error, 3 numerical abort (non-finite
//! loss or gradient mid-training).

use gdrd_core::config::ConfigError;
use gdrd_core::data::DataError;
use gdrd_core::eval::EvalError;
use gdrd_core::gradcheck::GradCheckError;
use gdrd_core::model::ModelError;
use gdrd_core::train::TrainError;
use gdrd_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Prefixes the message, keeping the exit-code class.
    pub fn context(self, ctx: &str) -> CliError {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{ctx}: {m}")),
            CliError::Check(m) => CliError::Check(format!("{ctx}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{ctx}: {m}")),
        }
    }
}

pub fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

pub fn io_usage(path: &std::path::Path, err: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {err}", path.display()))
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            // Identification finetunes a layer; its numerical aborts keep
            // the training exit code.
            EvalError::Train(t) => CliError::from(t),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<GradCheckError> for CliError {
    fn from(e: GradCheckError) -> Self {
        CliError::Usage(e.to_string())
    }
}
