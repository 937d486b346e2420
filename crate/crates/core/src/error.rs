use std::path::PathBuf;

/// Errors raised by the library.
///
/// Variants split into two families: input that does not validate
/// (exit code 2 at the command line) and broken internal invariants
/// (exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sample `{sample}`: {rule}")]
    InvalidSample { sample: String, rule: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("limit exceeded: {0}")]
    LimitExceeded(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of internal guarantees rather than of the input.
    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_) | Error::NonFiniteLoss { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
