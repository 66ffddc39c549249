//! Crate error type.

use thiserror::Error;

/// Errors surfaced by samplers, table parsing, oracles, and the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the documented domain of an operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A series or iteration failed to converge within its budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// An inverse-CDF table file could not be parsed or failed validation.
    #[error("table error: {0}")]
    Table(String),

    /// A model parameter set was rejected (e.g. sigma <= 0, |rho| >= 1).
    #[error("invalid model parameters: {0}")]
    Params(String),

    /// The acceptance/rejection sampler exhausted its proposal budget.
    #[error("rejection sampler exceeded {0} proposals")]
    ProposalBudget(u64),

    /// Underlying I/O failure (table files, CSV output).
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Configuration file could not be parsed.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
