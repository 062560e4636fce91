use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible decision at period {period}: {reason}")]
    Infeasible { period: usize, reason: String },

    #[error("trace error at line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("seed {seed}, path {path}: {source}")]
    AtPath {
        seed: u64,
        path: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration rather than a
    /// failure while running.
    pub fn is_config(&self) -> bool {
        if let Error::AtPath { source, .. } = self {
            return source.is_config();
        }
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidParameter(_)
                | Error::Trace { .. }
                | Error::TooLarge(_)
                | Error::Json(_)
        )
    }

    pub fn at_path(self, seed: u64, path: u64) -> Error {
        Error::AtPath {
            seed,
            path,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
