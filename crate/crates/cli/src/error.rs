use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Library(#[from] efl::Error),

    #[error("missing artifact {} (produce it with `efl {producer}` first)", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("gradient check failed at {failures} point(s)")]
    GradCheck { failures: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 0 success, 1 anything else, 2 validation, 3 numerical failure, 4 grad-check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Library(efl::Error::NonFinite { .. }) => 3,
            CliError::Library(_) => 2,
            CliError::GradCheck { .. } => 4,
            CliError::MissingArtifact { .. } | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
