use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain on which the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A documented precondition of a theorem-backed routine does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// An iterative routine failed to converge or a linear system was singular.
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        /// Last relative duality gap observed, when the routine tracks one.
        last_gap: Option<f64>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn precondition_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
