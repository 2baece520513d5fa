//! Simulation and analysis engine for covariate-adjusted response-adaptive
//! (CARA) two-arm trial designs.
//!
//! The crate is organised bottom-up:
//!
//! * [`glm`]: exponential-family response models per arm and IRLS maximum likelihood.
//! * [`covariates`]: covariate laws, sampling and expectations.
//! * [`targets`]: target allocation functions and their parameter gradients.
//! * [`designs`]: allocation policies (complete randomization, ZHCC, CADBCD) and burn-in.
//! * [`trial`]: sequential simulation of a single trial.
//! * [`asymptotics`]: limiting allocation proportion, variances and efficiency bound.
//! * [`montecarlo`]: replicated trials compared against the asymptotic theory.
//! * [`validation`]: numerical self-checks of the above (derivatives, expansions, identities).

pub mod asymptotics;
pub mod covariates;
pub mod designs;
pub mod error;
pub mod glm;
pub mod montecarlo;
pub mod reference;
pub mod seeding;
pub mod stats;
pub mod targets;
pub mod trial;
pub mod validation;

pub use asymptotics::AsymptoticSummary;
pub use covariates::{CovariateComponent, CovariateDistribution};
pub use designs::{Design, Policy};
pub use error::{Error, Result};
pub use glm::{ArmData, ArmModel, Family, ParamBox};
pub use montecarlo::{McConfig, MonteCarloReport};
pub use targets::{GradientMode, TargetFunction, TargetRule};
pub use trial::{TrialConfig, TrialResult, TrialState};

/// Two-arm coefficient pair `(theta_1, theta_2)`.
pub type ThetaPair = [Vec<f64>; 2];

/// Treatment arm of a two-arm trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::One, Arm::Two];

    /// Zero-based index (`One` -> 0).
    pub fn index(self) -> usize {
        match self {
            Arm::One => 0,
            Arm::Two => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "arm {}", self.index() + 1)
    }
}
