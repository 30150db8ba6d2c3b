use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pixel grid does not cover the scene: captured mass {achieved:.3e} < {required:.3e}")]
    Coverage { achieved: f64, required: f64 },

    #[error("unsupported Poisson moment order {0} (maximum 8)")]
    UnsupportedOrder(usize),

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    #[error("ill-conditioned weight system for centroid with {terms} terms")]
    IllConditionedWeights { terms: usize },

    #[error("degenerate summary: no eigenvalue above threshold")]
    DegenerateSummary,

    #[error("numerical failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
