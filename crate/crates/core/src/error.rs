use thiserror::Error;

use crate::Arm;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("response {y} is outside the support of the {family} family")]
    OutsideSupport { y: f64, family: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error(
        "covariate distribution is not discrete; use Monte Carlo expectations or ball proportions"
    )]
    NotDiscrete,

    #[error("policy requires exactly 2 arms, got {0}")]
    ArmCount(usize),

    #[error(
        "allocation requested at subject {subject} during burn-in (first {burn_in_len} subjects)"
    )]
    DuringBurnIn { subject: usize, burn_in_len: usize },

    #[error("burn-in position {position} outside 1..={burn_in_len}")]
    BurnInPosition { position: usize, burn_in_len: usize },

    #[error("Fisher information for {arm} is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularInformation { arm: Arm, min_eigenvalue: f64 },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Whether the error stems from the numerical model rather than from the input shape.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::SingularInformation { .. })
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
