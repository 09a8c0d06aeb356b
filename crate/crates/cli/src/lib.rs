//! Command-line harness: config-driven sweeps, adversary artifacts and the
//! exponent table.

pub mod commands;
pub mod config;
pub mod sweep;

use kbandit::adversary::AdversaryError;
use kbandit::base_algorithms::AlgoError;
use thiserror::Error;

pub use config::{Config, ConfigError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Usage(String),
    #[error("{0}")]
    Constraint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 config/input, 3 constraint violation, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Constraint(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn from_adversary(e: AdversaryError, context: &str) -> Self {
        match e {
            AdversaryError::ConstraintViolation { .. } | AdversaryError::Artifact(_) => {
                CliError::Constraint(format!("{context}: {e}"))
            }
            AdversaryError::QuadratureNotConverged(_) => CliError::Numerical(format!("{context}: {e}")),
            AdversaryError::UnsupportedOrder(_) => CliError::Usage(format!("{context}: {e}")),
        }
    }

    pub fn from_algo(e: AlgoError, context: &str) -> Self {
        match e {
            AlgoError::InvalidConfig(_) | AlgoError::Kernel(_) | AlgoError::HorizonTooSmall(_) => {
                CliError::Usage(format!("{context}: {e}"))
            }
            _ => CliError::Numerical(format!("{context}: {e}")),
        }
    }
}

impl From<AdversaryError> for CliError {
    fn from(e: AdversaryError) -> Self {
        CliError::from_adversary(e, "adversary")
    }
}
