use std::path::PathBuf;

/// Errors raised by the model, estimators and I/O layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs violate a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A value lies outside the domain of an operation (e.g. a non-positive state).
    #[error("domain error: {0}")]
    Domain(String),

    /// Quadrature, root finding or simulation failed to produce a finite answer.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An estimator could not produce an estimate from the supplied data.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Malformed input file, with a 1-based line and column when known.
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from bad user input rather than a numeric failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Domain(_) | Error::Parse { .. } | Error::Config(_) | Error::Io(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
