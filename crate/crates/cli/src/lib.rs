//! Subcommands that chain the vessel3d stages through files: phantom
//! generation, dictionary learning, featurization, classifier training,
//! whole-volume prediction and repeated-split evaluation.

mod args;
pub mod commands;
pub mod config;

pub use args::{execute, run, Cli, Command};
pub use config::PipelineConfig;

/// Failures mapped to process exit codes: 1 usage, 2 validation, 3 runtime.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] vessel3d::Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use vessel3d::Error;
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Core(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 2,
            CliError::Core(Error::Io { .. } | Error::Numerical(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}
