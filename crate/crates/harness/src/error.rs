//! Harness error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error at line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] tvsaddle::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl HarnessError {
    /// Whether the error comes from the configuration (exit code 1).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config { .. }
                | HarnessError::Invalid(_)
                | HarnessError::Core(tvsaddle::Error::Topology { .. } | tvsaddle::Error::InvalidModel(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
