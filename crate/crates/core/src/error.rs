use thiserror::Error;

/// Library-wide error type.
///
/// Variants are grouped by how a caller should react: `Invalid` means the
/// inputs or configuration were rejected before any work started, while
/// `Numeric` means a computation was attempted and failed (divergence,
/// non-finite values, rejection-sampling exhaustion). The CLI maps the two
/// groups to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Input or configuration validation failure.
    #[error("{0}")]
    Invalid(String),

    /// A numeric procedure started but could not produce a usable result.
    #[error("{0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True when the error is an input/configuration rejection rather than
    /// a numeric failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
