//! Target allocation functions `pi_1(theta, x)` for two arms.
//!
//! Built-in targets depend on `x` only through the arm means
//! `p_k = a_k'(x . theta_k)`; the gradient in theta follows by the chain rule.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::glm::{dot, Family};
use crate::ThetaPair;

/// Binary success probabilities are clamped into `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-6;
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Extension hook: a smooth target expressed through the two arm means.
pub trait MeanTarget: Send + Sync + fmt::Debug {
    fn value(&self, p1: f64, p2: f64) -> f64;
    /// `(d pi_1 / d p1, d pi_1 / d p2)`.
    fn partials(&self, p1: f64, p2: f64) -> (f64, f64);
}

#[derive(Debug, Clone)]
pub enum TargetRule {
    /// `sqrt(p1) / (sqrt(p1) + sqrt(p2))`.
    Rsihr,
    /// `sqrt(p1 q1) / (sqrt(p1 q1) + sqrt(p2 q2))`.
    NeymanBinary,
    Fixed(f64),
    Custom(Arc<dyn MeanTarget>),
}

impl TargetRule {
    pub fn name(&self) -> &'static str {
        match self {
            TargetRule::Rsihr => "rsihr",
            TargetRule::NeymanBinary => "neyman_binary",
            TargetRule::Fixed(_) => "fixed",
            TargetRule::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Central differences with step `rel_step * (1 + |theta_i|)`.
    FiniteDifference { rel_step: f64 },
}

#[derive(Debug, Clone)]
pub struct TargetFunction {
    rule: TargetRule,
    families: [Family; 2],
    gradient_mode: GradientMode,
}

impl TargetFunction {
    pub fn new(
        rule: TargetRule,
        families: [Family; 2],
        gradient_mode: GradientMode,
    ) -> Result<Self> {
        match &rule {
            TargetRule::Rsihr | TargetRule::NeymanBinary => {
                if !families.iter().all(Family::is_binary) {
                    return Err(Error::invalid(
                        "target",
                        format!("{} requires binary-response arms", rule.name()),
                    ));
                }
            }
            TargetRule::Fixed(c) => {
                if !(*c > 0.0 && *c < 1.0) {
                    return Err(Error::invalid(
                        "target.c",
                        "fixed allocation must lie in (0, 1)",
                    ));
                }
            }
            TargetRule::Custom(_) => {}
        }
        if let GradientMode::FiniteDifference { rel_step } = gradient_mode {
            if !(rel_step > 0.0 && rel_step.is_finite()) {
                return Err(Error::invalid(
                    "target.gradient",
                    "finite-difference step must be positive",
                ));
            }
        }
        Ok(Self {
            rule,
            families,
            gradient_mode,
        })
    }

    pub fn fixed(c: f64, families: [Family; 2]) -> Result<Self> {
        Self::new(TargetRule::Fixed(c), families, GradientMode::Analytic)
    }

    pub fn rsihr_binary() -> Self {
        Self::new(
            TargetRule::Rsihr,
            [Family::BernoulliLogit; 2],
            GradientMode::Analytic,
        )
        .expect("binary arms")
    }

    pub fn rule(&self) -> &TargetRule {
        &self.rule
    }

    pub fn families(&self) -> &[Family; 2] {
        &self.families
    }

    pub fn gradient_mode(&self) -> GradientMode {
        self.gradient_mode
    }

    pub fn with_gradient_mode(&self, gradient_mode: GradientMode) -> Self {
        Self {
            gradient_mode,
            ..self.clone()
        }
    }

    /// Target with the arm roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            families: [self.families[1], self.families[0]],
            ..self.clone()
        }
    }

    fn check(&self, theta: &ThetaPair, x: &[f64]) -> Result<()> {
        check_dim(x.len(), theta[0].len())?;
        check_dim(x.len(), theta[1].len())
    }

    /// Arm mean and its derivative with respect to the linear predictor.
    fn mean_and_slope(&self, arm: usize, theta: &[f64], x: &[f64]) -> (f64, f64) {
        let family = &self.families[arm];
        let mu = dot(x, theta);
        let p = family.mean(mu);
        if family.is_binary() {
            let clamped = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            let slope = if clamped == p {
                family.variance(mu)
            } else {
                0.0
            };
            (clamped, slope)
        } else {
            (p, family.variance(mu))
        }
    }

    /// `(pi_1, d pi_1/d p1, d pi_1/d p2)` from the arm means.
    fn from_means(&self, p1: f64, p2: f64) -> (f64, f64, f64) {
        match &self.rule {
            TargetRule::Rsihr => {
                let (s1, s2) = (p1.sqrt(), p2.sqrt());
                let total = s1 + s2;
                let denom = total * total;
                (s1 / total, 0.5 / s1 * s2 / denom, -0.5 / s2 * s1 / denom)
            }
            TargetRule::NeymanBinary => {
                let (s1, s2) = ((p1 * (1.0 - p1)).sqrt(), (p2 * (1.0 - p2)).sqrt());
                let (ds1, ds2) = ((1.0 - 2.0 * p1) / (2.0 * s1), (1.0 - 2.0 * p2) / (2.0 * s2));
                let total = s1 + s2;
                let denom = total * total;
                (s1 / total, ds1 * s2 / denom, -ds2 * s1 / denom)
            }
            TargetRule::Fixed(c) => (*c, 0.0, 0.0),
            TargetRule::Custom(t) => {
                let v = t.value(p1, p2);
                let clamped = v.clamp(P_CLAMP, 1.0 - P_CLAMP);
                if clamped == v {
                    let (d1, d2) = t.partials(p1, p2);
                    (v, d1, d2)
                } else {
                    (clamped, 0.0, 0.0)
                }
            }
        }
    }

    /// `pi_1(theta, x)`.
    pub fn evaluate(&self, theta: &ThetaPair, x: &[f64]) -> Result<f64> {
        self.check(theta, x)?;
        Ok(self.evaluate_unchecked(theta, x))
    }

    pub(crate) fn evaluate_unchecked(&self, theta: &ThetaPair, x: &[f64]) -> f64 {
        if let TargetRule::Fixed(c) = self.rule {
            return c;
        }
        let (p1, _) = self.mean_and_slope(0, &theta[0], x);
        let (p2, _) = self.mean_and_slope(1, &theta[1], x);
        self.from_means(p1, p2).0
    }

    /// `d pi_1 / d(theta_1, theta_2)` (length `2d`) using the configured gradient mode.
    pub fn gradient(&self, theta: &ThetaPair, x: &[f64]) -> Result<Vec<f64>> {
        match self.gradient_mode {
            GradientMode::Analytic => self.analytic_gradient(theta, x),
            GradientMode::FiniteDifference { rel_step } => {
                self.finite_difference_gradient(theta, x, rel_step)
            }
        }
    }

    pub fn analytic_gradient(&self, theta: &ThetaPair, x: &[f64]) -> Result<Vec<f64>> {
        self.check(theta, x)?;
        let d = x.len();
        if let TargetRule::Fixed(_) = self.rule {
            return Ok(vec![0.0; 2 * d]);
        }
        let (p1, slope1) = self.mean_and_slope(0, &theta[0], x);
        let (p2, slope2) = self.mean_and_slope(1, &theta[1], x);
        let (_, dp1, dp2) = self.from_means(p1, p2);
        let (c1, c2) = (dp1 * slope1, dp2 * slope2);
        Ok(x.iter()
            .map(|xi| c1 * xi)
            .chain(x.iter().map(|xi| c2 * xi))
            .collect())
    }

    pub fn finite_difference_gradient(
        &self,
        theta: &ThetaPair,
        x: &[f64],
        rel_step: f64,
    ) -> Result<Vec<f64>> {
        self.check(theta, x)?;
        let mut grad = Vec::with_capacity(2 * x.len());
        let mut work = theta.clone();
        for arm in 0..2 {
            for i in 0..x.len() {
                let orig = theta[arm][i];
                let h = rel_step * (1.0 + orig.abs());
                work[arm][i] = orig + h;
                let up = self.evaluate_unchecked(&work, x);
                work[arm][i] = orig - h;
                let down = self.evaluate_unchecked(&work, x);
                work[arm][i] = orig;
                grad.push((up - down) / (2.0 * h));
            }
        }
        Ok(grad)
    }
}
