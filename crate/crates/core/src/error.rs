//! Error taxonomy shared by synthesis, simulation, and the CLI.
//!
//! The three variants mirror the distinct failure classes a caller must react
//! to differently: malformed input, a violated standing assumption of the
//! control design (connectivity, skew symmetry, gain positivity, capacity
//! feasibility), and numeric breakdown during integration.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structurally invalid input: bad dimensions, out-of-range indices,
    /// malformed configuration values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A standing assumption of the synthesis is violated by the scenario
    /// (disconnected graph, non-skew generator, non-positive gain,
    /// infeasible capacity, unbalanced demand where balance is required).
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    /// Numeric failure during integration or factorization.
    #[error("numeric failure: {what}{}", time.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    NumericFailure {
        what: String,
        /// Escape time for overflow/NaN during simulation, if applicable.
        time: Option<f64>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn assumption(msg: impl Into<String>) -> Self {
        Error::AssumptionViolated(msg.into())
    }

    pub(crate) fn numeric(what: impl Into<String>, time: Option<f64>) -> Self {
        Error::NumericFailure {
            what: what.into(),
            time,
        }
    }
}
