use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite: {path} not found; run `bodymesh {command}` first")]
    Missing { command: &'static str, path: PathBuf },
    #[error("stale input: {path} does not match the hash recorded by `bodymesh {command}` (rerun it, or pass --force)")]
    Stale { command: &'static str, path: PathBuf },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(bodymesh::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } | CliError::Stale { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<bodymesh::Error> for CliError {
    fn from(e: bodymesh::Error) -> Self {
        match e {
            bodymesh::Error::NonFinite(what) => CliError::Numeric(what),
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
