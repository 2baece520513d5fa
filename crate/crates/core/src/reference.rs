//! The two-arm logistic reference scenario used by the validation and acceptance suites.
//!
//! Covariates `(1, Bernoulli(0.5))`, arm coefficients `(0.5, 0.5)` and `(-0.5, 0.5)`,
//! RSIHR target, burn-in of 5 subjects per arm.

use crate::covariates::{CovariateComponent, CovariateDistribution};
use crate::designs::{Design, Policy};
use crate::glm::{ArmModel, Family};
use crate::targets::TargetFunction;
use crate::trial::TrialConfig;

pub const REFERENCE_THETA: [[f64; 2]; 2] = [[0.5, 0.5], [-0.5, 0.5]];
pub const REFERENCE_BURN_IN: usize = 5;
pub const REFERENCE_N: usize = 2000;
pub const REFERENCE_REPLICATIONS: usize = 1000;

pub fn reference_arms() -> [ArmModel; 2] {
    REFERENCE_THETA.map(|t| {
        ArmModel::with_default_box(Family::BernoulliLogit, t.to_vec()).expect("inside box")
    })
}

pub fn reference_covariates() -> CovariateDistribution {
    CovariateDistribution::new(vec![
        CovariateComponent::Intercept,
        CovariateComponent::Bernoulli { p: 0.5 },
    ])
    .expect("valid")
}

pub fn reference_trial(policy: Policy, n: usize) -> TrialConfig {
    TrialConfig::new(
        reference_arms(),
        reference_covariates(),
        TargetFunction::rsihr_binary(),
        Design::new(policy, REFERENCE_BURN_IN).expect("valid design"),
        n,
    )
    .expect("valid reference configuration")
}
