//! Failure classes, each with its own process exit code. Failed runs print
//! one machine-readable JSON error object to stderr.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unusable flags or configuration.
    #[error("{0}")]
    Config(String),
    /// An input file that cannot be read.
    #[error("cannot read `{}`: {source}", path.display())]
    MissingInput { path: PathBuf, source: std::io::Error },
    /// An input that was read but violates its record contract.
    #[error("`{}`: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    /// A metric or fit that is undefined on the given data.
    #[error("{0}")]
    UndefinedMetric(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingInput { .. } => "missing_input",
            CliError::Schema { .. } => "schema",
            CliError::UndefinedMetric(_) => "undefined_metric",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Schema { .. } => 4,
            CliError::UndefinedMetric(_) => 5,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut error = serde_json::json!({
            "class": self.class(),
            "message": self.to_string(),
        });
        match self {
            CliError::MissingInput { path, .. } | CliError::Schema { path, .. } => {
                error["path"] = serde_json::json!(path.display().to_string());
            }
            _ => {}
        }
        serde_json::json!({ "error": error })
    }
}

pub fn schema(path: &Path, message: impl ToString) -> CliError {
    CliError::Schema { path: path.to_path_buf(), message: message.to_string() }
}

pub fn missing(path: &Path, source: std::io::Error) -> CliError {
    CliError::MissingInput { path: path.to_path_buf(), source }
}

pub fn internal(message: impl ToString) -> CliError {
    CliError::Internal(message.to_string())
}
