use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can surface.
#[derive(Debug, Error)]
pub enum ElaError {
    /// A distribution parameter is outside its domain (e.g. a nonpositive shape).
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// A function argument is outside the function's domain.
    #[error("argument out of domain: {0}")]
    Domain(String),

    /// Shapes, lengths or orderings do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// An input record or file violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Trace data needed by a schedule window is missing.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A configuration value is unsupported or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative method failed to converge or produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ElaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ElaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ElaError::Numerical(_) => 2,
            ElaError::Io { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ElaError>;
