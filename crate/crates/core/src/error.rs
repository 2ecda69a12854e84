use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid state: zeta^2 + chi^2 + upsilon^2 = {norm_sq} exceeds 1")]
    InvalidState { norm_sq: f64 },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("state is not single-error-type: weight {mass} outside span{{|00>, |11>}}")]
    NotSingleErrorType { mass: f64 },

    #[error("invalid mixture weights: {0}")]
    InvalidWeights(String),

    #[error("profile is not convex: {0}")]
    NonConvexSpec(String),

    #[error("Fock truncation dim {dim} too small for |alpha| = {alpha} (tail mass {tail:e})")]
    TruncationTooSmall { dim: usize, alpha: f64, tail: f64 },

    #[error("overlap {overlap} too close to 1 for a stable dual basis")]
    IllConditioned { overlap: f64 },

    #[error("outcome has zero probability")]
    DegenerateOutcome,

    #[error("protocol violates the completeness constraint")]
    InfeasibleProtocol,

    #[error("search found yield {found} above the analytic bound {bound}")]
    BoundViolated { found: f64, bound: f64 },

    #[error("subsystem error: {0}")]
    Subsystem(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}

/// Checks `lo <= value <= hi`, rejecting NaN.
pub(crate) fn check_closed(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::param(name, value, "out of range"))
    }
}

/// Checks `lo < value < hi`, rejecting NaN.
pub(crate) fn check_open(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value > lo && value < hi {
        Ok(())
    } else {
        Err(Error::param(name, value, "out of range"))
    }
}
