use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field violated one of its invariants.
    #[error("invalid configuration: {field}: {message}")]
    Config {
        field: &'static str,
        message: String,
    },

    /// An argument was outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature gave up before reaching the requested tolerance.
    #[error("{what} did not converge: partial value {partial:e}, error estimate {error_estimate:e}")]
    NonConvergence {
        what: &'static str,
        partial: f64,
        error_estimate: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}
