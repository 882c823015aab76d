use thiserror::Error;

use crate::rd::BaPoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad probabilities, mismatched dimensions, unsupported
    /// distortion kind for the requested operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("distortion target {target} is below the minimum achievable {minimum} ({which})")]
    Infeasible {
        which: &'static str,
        target: f64,
        minimum: f64,
    },

    #[error("information density undefined for source symbol {x}: {reason}")]
    UndefinedDensity { x: usize, reason: &'static str },

    #[error("alternating minimization did not converge after {} iterations (gap {:.3e})", .last.iterations, .last.gap)]
    NotConverged { last: Box<BaPoint> },

    #[error("slope search failed: {0}")]
    SlopeSearch(String),

    #[error("log-loss regime condition violated: {0}")]
    Regime(String),

    #[error("enumeration needs {required:.3e} steps, budget is {budget:.3e}")]
    Budget { required: f64, budget: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
