use thiserror::Error;

/// Errors raised by the divergence, clustering and texture routines.
///
/// `Input` covers malformed or inconsistent arguments; `Numeric` covers
/// factorizations that fail or results that violate a mathematical guarantee
/// beyond roundoff (an indefinite Gram matrix, a negative squared distance).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for errors caused by the caller's data rather than by arithmetic.
    pub fn is_input(&self) -> bool {
        matches!(self, Error::DimensionMismatch(..) | Error::Input(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
