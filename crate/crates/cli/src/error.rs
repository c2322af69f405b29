use std::path::Path;

/// Failures surfaced by the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: config, flags, file contents. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Numerical or runtime failure. Exit code 2.
    #[error("{0}")]
    Runtime(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: moeflow::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Core { source, .. } if source.is_validation() => 1,
            _ => 2,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a context string to library errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> CliResult<T>;
}

impl<T> Context<T> for moeflow::Result<T> {
    fn context(self, what: impl Into<String>) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}
