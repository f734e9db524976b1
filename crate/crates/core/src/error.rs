use thiserror::Error;

/// Errors raised by the matching laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates a structural requirement.
    #[error("configuration error: {0}")]
    Config(String),

    /// Exact bookkeeping (vertex sums, capacities) does not balance.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// The hyperfiniteness witness construction could not proceed.
    #[error("witness failure: {0}")]
    Witness(String),

    /// Fitting was refused because too few usable points were available.
    #[error("fit refused: {0}")]
    Fit(String),

    /// An algorithm reached a state its invariants rule out.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    /// A size cap was exceeded.
    #[error("refused: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, Error>;
