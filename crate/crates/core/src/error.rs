use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record {record}: {message}")]
    Schema { record: String, message: String },

    #[error("dimensionality mismatch in {record}: expected {expected}, found {found}")]
    Dimension {
        record: String,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            record: record.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or configuration rather than by
    /// the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } => false,
            Error::Stage { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
