use thiserror::Error;

use crate::policy::RsoStepReport;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input was outside the domain of the operation (NaN, infinite, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    /// A value would be undefined, typically an infinite KL divergence.
    #[error("value error: {0}")]
    Value(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("rejection sampling stage {} accepted no candidates", .0.step)]
    EmptyStage(Box<RsoStepReport>),
}

pub type Result<T> = std::result::Result<T, Error>;
