//! Limiting allocation proportion, information matrices and the asymptotic
//! variance of `sqrt(n) (N_{n,1}/n - v)` for two-arm designs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::covariates::{CovariateDistribution, ExpectMode, IntegrationRule};
use crate::error::{Error, Result};
use crate::glm::ArmModel;
use crate::targets::TargetFunction;
use crate::trial::TrialConfig;
use crate::{Arm, ThetaPair};

/// Information matrices with an eigenvalue at or below this are treated as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;

/// Row-major dense matrix for reporting.
pub type MatrixRows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> MatrixRows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// `I_k = E[pi_k(theta, xi) I_k(theta_k | xi)]` with `pi_2 = 1 - pi_1`.
pub fn information(
    arm: Arm,
    arms: &[ArmModel; 2],
    target: &TargetFunction,
    rule: &IntegrationRule,
) -> Result<DMatrix<f64>> {
    let theta = theta_pair(arms);
    let model = &arms[arm.index()];
    let info = rule.expect_matrix(|x| {
        let pi1 = target.evaluate_unchecked(&theta, x);
        let share = match arm {
            Arm::One => pi1,
            Arm::Two => 1.0 - pi1,
        };
        model.conditional_fisher_info(x).expect("dimension checked") * share
    });
    let min_eigenvalue = info.clone().symmetric_eigenvalues().min();
    if !(min_eigenvalue > SINGULAR_TOLERANCE) {
        return Err(Error::SingularInformation {
            arm,
            min_eigenvalue,
        });
    }
    Ok(info)
}

fn theta_pair(arms: &[ArmModel; 2]) -> ThetaPair {
    [arms[0].theta().to_vec(), arms[1].theta().to_vec()]
}

/// `rho(theta) = E[pi_1(theta, xi)]`.
pub fn limit_proportion(target: &TargetFunction, theta: &ThetaPair, rule: &IntegrationRule) -> f64 {
    rule.expect(|x| target.evaluate_unchecked(theta, x)).value
}

/// `E[d pi_1 / d theta]` using the analytic gradient.
pub fn rho_gradient(
    target: &TargetFunction,
    theta: &ThetaPair,
    rule: &IntegrationRule,
) -> Vec<f64> {
    rule.expect_vec(|x| {
        target
            .analytic_gradient(theta, x)
            .expect("dimension checked")
    })
}

/// Central differences of `rho(theta)` with step `rel_step * (1 + |theta_i|)`.
pub fn rho_gradient_finite_difference(
    target: &TargetFunction,
    theta: &ThetaPair,
    rule: &IntegrationRule,
    rel_step: f64,
) -> Vec<f64> {
    let mut work = theta.clone();
    let mut out = Vec::new();
    for arm in 0..2 {
        for i in 0..theta[arm].len() {
            let orig = theta[arm][i];
            let h = rel_step * (1.0 + orig.abs());
            work[arm][i] = orig + h;
            let up = limit_proportion(target, &work, rule);
            work[arm][i] = orig - h;
            let down = limit_proportion(target, &work, rule);
            work[arm][i] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrationErrors {
    pub v: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

/// Theoretical quantities for a two-arm CADBCD with exponent `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticSummary {
    pub gamma: f64,
    /// `v = E[pi_1(theta, xi)]`.
    pub v: f64,
    pub rho: [f64; 2],
    /// `E[d pi_1 / d theta]`, length `2d`.
    pub grad_rho: Vec<f64>,
    pub information: [MatrixRows; 2],
    /// `V = diag(I_1^{-1}, I_2^{-1})`.
    pub v_matrix: MatrixRows,
    /// `E[pi_1 (1 - pi_1)]`.
    pub sigma1_sq: f64,
    /// `Var(pi_1(theta, xi))`.
    pub sigma2_sq: f64,
    /// `grad_rho V grad_rho^T`.
    pub sigma3_sq: f64,
    pub lambda: f64,
    pub sigma_sq: f64,
    /// Best asymptotic variability `sigma2_sq + sigma3_sq`.
    pub b: f64,
    pub b_matrix: [[f64; 2]; 2],
    /// ZHCC asymptotic variance `2 sigma3_sq + v (1 - v)` of the arm-1 proportion.
    pub zhcc_variance: f64,
    pub zhcc_matrix: [[f64; 2]; 2],
    /// Standard errors of the Monte Carlo integrals; absent for exact enumeration.
    pub mc_standard_errors: Option<IntegrationErrors>,
}

impl AsymptoticSummary {
    /// `lambda = gamma sigma1_sq / (v (1 - v))`.
    pub fn lambda_at(&self, gamma: f64) -> f64 {
        if gamma == 0.0 {
            0.0
        } else {
            gamma * self.sigma1_sq / (self.v * (1.0 - self.v))
        }
    }

    /// `sigma^2(gamma) = (sigma1_sq + sigma3_sq) / (1 + 2 lambda) + sigma2_sq + sigma3_sq`.
    pub fn sigma_sq_at(&self, gamma: f64) -> f64 {
        self.efficiency_gap(gamma) + self.b
    }

    /// `sigma^2(gamma) - B = (sigma1_sq + sigma3_sq) / (1 + 2 lambda)`; zero at `gamma = inf`.
    pub fn efficiency_gap(&self, gamma: f64) -> f64 {
        let lambda = self.lambda_at(gamma);
        if lambda.is_infinite() {
            0.0
        } else {
            (self.sigma1_sq + self.sigma3_sq) / (1.0 + 2.0 * lambda)
        }
    }

    /// Copy of the summary re-evaluated at another exponent.
    pub fn at_gamma(&self, gamma: f64) -> Self {
        Self {
            gamma,
            lambda: self.lambda_at(gamma),
            sigma_sq: self.sigma_sq_at(gamma),
            ..self.clone()
        }
    }
}

/// Summary over an explicit integration rule.
pub fn summary_with_rule(
    arms: &[ArmModel; 2],
    target: &TargetFunction,
    rule: &IntegrationRule,
    gamma: f64,
) -> Result<AsymptoticSummary> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::invalid("gamma", "must be non-negative"));
    }
    let theta = theta_pair(arms);
    let d = arms[0].dim();
    let info = [
        information(Arm::One, arms, target, rule)?,
        information(Arm::Two, arms, target, rule)?,
    ];
    let mut v_matrix = DMatrix::<f64>::zeros(2 * d, 2 * d);
    for (k, i_k) in info.iter().enumerate() {
        let inv =
            i_k.clone()
                .cholesky()
                .map(|c| c.inverse())
                .ok_or(Error::SingularInformation {
                    arm: Arm::BOTH[k],
                    min_eigenvalue: 0.0,
                })?;
        v_matrix.view_mut((k * d, k * d), (d, d)).copy_from(&inv);
    }

    let pi = |x: &[f64]| target.evaluate_unchecked(&theta, x);
    let v_est = rule.expect(pi);
    let v = v_est.value;
    let s1_est = rule.expect(|x| {
        let p = pi(x);
        p * (1.0 - p)
    });
    let s2_est = rule.expect(|x| (pi(x) - v).powi(2));
    let sigma1_sq = s1_est.value;
    let sigma2_sq = s2_est.value;

    let grad_rho = rho_gradient(target, &theta, rule);
    let g = DVector::from_column_slice(&grad_rho);
    let sigma3_sq = g.dot(&(&v_matrix * &g));

    let b = sigma2_sq + sigma3_sq;
    let zhcc_variance = 2.0 * sigma3_sq + v * (1.0 - v);
    let signed = |s: f64| [[s, -s], [-s, s]];
    let mut zhcc_matrix = signed(2.0 * sigma3_sq);
    let rho = [v, 1.0 - v];
    for i in 0..2 {
        for j in 0..2 {
            let diag = if i == j { rho[i] } else { 0.0 };
            zhcc_matrix[i][j] += diag - rho[i] * rho[j];
        }
    }

    let base = AsymptoticSummary {
        gamma,
        v,
        rho,
        grad_rho,
        information: [rows(&info[0]), rows(&info[1])],
        v_matrix: rows(&v_matrix),
        sigma1_sq,
        sigma2_sq,
        sigma3_sq,
        lambda: 0.0,
        sigma_sq: 0.0,
        b,
        b_matrix: signed(b),
        zhcc_variance,
        zhcc_matrix,
        mc_standard_errors: rule.is_monte_carlo().then_some(IntegrationErrors {
            v: v_est.std_error,
            sigma1_sq: s1_est.std_error,
            sigma2_sq: s2_est.std_error,
        }),
    };
    Ok(base.at_gamma(gamma))
}

/// Summary for arms, covariate law and target, using one shared integration rule.
pub fn summary_for(
    arms: &[ArmModel; 2],
    covariates: &CovariateDistribution,
    target: &TargetFunction,
    gamma: f64,
) -> Result<AsymptoticSummary> {
    let rule = covariates.integration_rule(ExpectMode::Auto);
    summary_with_rule(arms, target, &rule, gamma)
}

/// Summary at the true parameters of a trial configuration.
pub fn summary(config: &TrialConfig, gamma: f64) -> Result<AsymptoticSummary> {
    summary_for(config.arms(), config.covariates(), config.target(), gamma)
}
