//! Command-line harness around `igloo-core`: configuration, data loading,
//! checkpoints and the `train`, `eval`, `bench`, `gradcheck` and `gen-data`
//! commands.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod data;

use std::path::{Path, PathBuf};

/// Everything that can stop a command. [`HarnessError::exit_code`] maps each
/// kind to the process exit status.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] igloo_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Diverged(_) => 2,
            Self::GradCheck(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
