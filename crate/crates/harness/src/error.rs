//! Harness-level errors.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("core: {0}")]
    Core(#[from] vlbc_core::CoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Stable machine-readable kind tag for the error record.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Core(_) => "core",
            HarnessError::Io(_) => "io",
            HarnessError::Config(_) => "config",
            HarnessError::Format(_) => "format",
            HarnessError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
