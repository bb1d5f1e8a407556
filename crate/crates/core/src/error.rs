use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input `{param}`: {reason}")]
    InvalidInput { param: &'static str, reason: String },

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("contract violation in `{param}`: {reason}")]
    ContractViolation { param: &'static str, reason: String },

    #[error("bound exceeds target {target} for every eta up to {eta_max:e}")]
    Unattainable { target: f64, eta_max: f64 },

    #[error("rank deficiency: cell {cell} holds {count} distinct regressor values, need {needed}")]
    RankDeficient { cell: usize, count: usize, needed: usize },

    #[error("singular local design at w = {w}")]
    WindowDegenerate { w: f64 },

    #[error("degenerate variance estimate {value:e} at w = {w}")]
    DegenerateVariance { w: f64, value: f64 },

    #[error("invalid model spec `{param}`: {reason}")]
    InvalidSpec { param: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(param: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            param,
            reason: reason.into(),
        }
    }

    pub(crate) fn contract(param: &'static str, reason: impl Into<String>) -> Self {
        Error::ContractViolation {
            param,
            reason: reason.into(),
        }
    }

    pub(crate) fn spec(param: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            param,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics on valid inputs (singular designs,
    /// degenerate variances, unattainable targets) as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unattainable { .. }
                | Error::RankDeficient { .. }
                | Error::WindowDegenerate { .. }
                | Error::DegenerateVariance { .. }
        )
    }
}
