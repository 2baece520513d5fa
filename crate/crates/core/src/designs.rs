//! Allocation policies and the burn-in schedule.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::TargetFunction;
use crate::trial::TrialState;
use crate::Arm;

/// Proportions entering `g` are clamped into `[PROPORTION_CLAMP, 1 - PROPORTION_CLAMP]`.
pub const PROPORTION_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Policy {
    /// Arm 1 with fixed probability `p`, ignoring all history.
    CompleteRandomization { p: f64 },
    /// Arm 1 with probability `pi_1(theta_hat_m, xi_{m+1})`.
    Zhcc,
    /// Covariate-adjusted doubly adaptive biased coin with tuning exponent `gamma`
    /// (`f64::INFINITY` gives the deterministic limit).
    Cadbcd { gamma: f64 },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::CompleteRandomization { .. } => "complete_randomization",
            Policy::Zhcc => "zhcc",
            Policy::Cadbcd { .. } => "cadbcd",
        }
    }

    /// Exponent of the equivalent CADBCD rule (ZHCC is `gamma = 0`).
    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Policy::Zhcc => Some(0.0),
            Policy::Cadbcd { gamma } => Some(gamma),
            Policy::CompleteRandomization { .. } => None,
        }
    }
}

/// A policy together with its burn-in size `m0` (subjects per arm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Design {
    policy: Policy,
    burn_in: usize,
}

impl Design {
    pub fn new(policy: Policy, burn_in: usize) -> Result<Self> {
        if burn_in < 1 {
            return Err(Error::invalid(
                "policy.m0",
                "burn-in must be at least 1 per arm",
            ));
        }
        match policy {
            Policy::CompleteRandomization { p } if !(p > 0.0 && p < 1.0) => {
                return Err(Error::invalid("policy.p", "must lie in (0, 1)"));
            }
            Policy::Cadbcd { gamma } if gamma.is_nan() || gamma < 0.0 => {
                return Err(Error::invalid("policy.gamma", "must be non-negative"));
            }
            _ => {}
        }
        Ok(Self { policy, burn_in })
    }

    /// Default `m0 = max(2d, 5)`.
    pub fn default_burn_in(dim: usize) -> usize {
        (2 * dim).max(5)
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    /// `m0`.
    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// Number of burn-in subjects, `2 m0`.
    pub fn burn_in_len(&self) -> usize {
        2 * self.burn_in
    }

    /// Probability that subject `m + 1` (covariate `xi_new`) goes to arm 1.
    pub fn allocation_probability(
        &self,
        state: &TrialState,
        xi_new: &[f64],
        target: &TargetFunction,
    ) -> Result<f64> {
        let m = state.subjects();
        if m < self.burn_in_len() {
            return Err(Error::DuringBurnIn {
                subject: m + 1,
                burn_in_len: self.burn_in_len(),
            });
        }
        let pi_hat = target.evaluate(state.theta_hat(), xi_new)?;
        let share = state.counts()[0] as f64 / m as f64;
        Ok(self.allocation_from_estimates(pi_hat, share, state.rho_hat()))
    }

    /// Allocation given `pi_hat_m`, the current arm-1 share `N_{m,1}/m` and `rho_hat_m`.
    pub fn allocation_from_estimates(&self, pi_hat: f64, share: f64, rho_hat: f64) -> f64 {
        match self.policy {
            Policy::CompleteRandomization { p } => p,
            Policy::Zhcc => pi_hat,
            Policy::Cadbcd { gamma } => g(pi_hat, share, rho_hat, gamma),
        }
    }
}

/// Allocation function
/// `g(pi, a, b) = pi (b/a)^gamma / [pi (b/a)^gamma + (1 - pi) ((1-b)/(1-a))^gamma]`.
///
/// Evaluated on the log-odds scale so large exponents neither overflow nor
/// underflow. `a` and `b` are clamped first; `gamma = inf` gives 1, 0 or `pi`
/// as `b` is above, below or equal to `a`.
pub fn g(pi: f64, a: f64, b: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return pi;
    }
    let a = a.clamp(PROPORTION_CLAMP, 1.0 - PROPORTION_CLAMP);
    let b = b.clamp(PROPORTION_CLAMP, 1.0 - PROPORTION_CLAMP);
    if a == b || pi <= 0.0 || pi >= 1.0 {
        return pi;
    }
    if gamma.is_infinite() {
        return if b > a { 1.0 } else { 0.0 };
    }
    let shift = (b.ln() - a.ln()) - ((1.0 - b).ln() - (1.0 - a).ln());
    let log_odds = pi.ln() - (1.0 - pi).ln() + gamma * shift;
    if log_odds >= 0.0 {
        1.0 / (1.0 + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (1.0 + e)
    }
}

/// Remainder of the first-order expansion of `g` around `a = b = v`:
/// `|g(pi, v+da, v+db) - [pi - gamma pi (1-pi) / (v (1-v)) (da - db)]|`.
pub fn g_expansion_residual(pi: f64, v: f64, da: f64, db: f64, gamma: f64) -> f64 {
    expansion_residual_with(pi, v, da, db, gamma, gamma)
}

/// As [`g_expansion_residual`] but evaluating `g` with a different exponent
/// than the linear term; used as a negative control by the validation suite.
pub(crate) fn expansion_residual_with(
    pi: f64,
    v: f64,
    da: f64,
    db: f64,
    gamma_g: f64,
    gamma_lin: f64,
) -> f64 {
    let linear = pi - gamma_lin * pi * (1.0 - pi) / (v * (1.0 - v)) * (da - db);
    (g(pi, v + da, v + db, gamma_g) - linear).abs()
}

/// One uniformly permuted block holding `m0` copies of each arm.
#[derive(Debug, Clone, PartialEq)]
pub struct BurnInSchedule {
    order: Vec<Arm>,
}

impl BurnInSchedule {
    pub fn new<R: Rng + ?Sized>(m0: usize, rng: &mut R) -> Self {
        let mut order: Vec<Arm> = std::iter::repeat_n(Arm::One, m0)
            .chain(std::iter::repeat_n(Arm::Two, m0))
            .collect();
        order.shuffle(rng);
        Self { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Arm of subject `m` (1-based).
    pub fn assignment(&self, m: usize) -> Result<Arm> {
        if m == 0 || m > self.order.len() {
            return Err(Error::BurnInPosition {
                position: m,
                burn_in_len: self.order.len(),
            });
        }
        Ok(self.order[m - 1])
    }
}
