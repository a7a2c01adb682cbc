use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HoiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HoiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },

    /// A record parsed but broke a domain invariant.
    #[error("{context}: {message}")]
    Invalid { context: String, message: String },

    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },

    #[error("`{key}` is missing from the {table} table")]
    Missing { key: String, table: &'static str },

    #[error("degenerate box {0:?}: width and height must be strictly positive")]
    DegenerateBox([f64; 4]),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
}

impl HoiError {
    pub fn invalid(context: impl Into<String>, message: impl Into<String>) -> Self {
        HoiError::Invalid { context: context.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HoiError::Io { path: path.into(), source }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HoiError::Config(_) => 2,
            HoiError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            HoiError::Io { .. } => 1,
            HoiError::InfeasibleSplit(_) => 4,
            HoiError::Parse { .. }
            | HoiError::Invalid { .. }
            | HoiError::Dimension { .. }
            | HoiError::Missing { .. }
            | HoiError::DegenerateBox(_) => 3,
        }
    }
}
