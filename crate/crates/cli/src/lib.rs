//! Command-line harness around `kronqn-core`: run configurations and
//! presets, the training loop with its CSV log, and grid search.

pub mod arch;
pub mod config;
pub mod grid;
pub mod runlog;
pub mod train;

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] kronqn_core::Error),
    #[error("io: {0}")]
    Io(String),
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    pub fn config(e: impl fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// Process exit code: 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(kronqn_core::Error::Format { .. }) => 2,
            _ => 1,
        }
    }
}
