use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{path}: file not found")]
    MissingFile { path: String },

    #[error(transparent)]
    Numerical(#[from] dislo_core::Error),

    #[error("field value at station {index} is not finite")]
    NonFinite { index: usize },

    #[error("stations do not form the declared lattice: {0}")]
    NotLattice(String),

    #[error("{0} verification checks failed")]
    ChecksFailed(usize),

    #[error("{path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    /// 2 for anything the scenario author can fix, 1 for failures during
    /// the computation or while writing results.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } | CliError::MissingFile { .. } => 2,
            // The scenes do not satisfy the theorem's hypotheses.
            CliError::Numerical(dislo_core::Error::Hypothesis(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn config(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{context}: {err}"))
    }

    pub(crate) fn output(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
