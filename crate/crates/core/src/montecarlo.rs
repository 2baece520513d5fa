//! Replicated trials compared against the asymptotic theory.
//!
//! Replication `r` is seeded with [`split_seed`]`(base_seed, r)`. Outcomes are
//! collected in replication order and reduced serially, so a report does not
//! depend on the number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{summary_for, AsymptoticSummary, MatrixRows};
use crate::designs::Policy;
use crate::error::{Error, Result};
use crate::seeding::{rng_from_seed, split_seed};
use crate::stats::{compensated_sum, Moments};
use crate::targets::TargetFunction;
use crate::trial::{run_trial_with, TrialConfig};

/// Relative tolerance for the variance of the scaled allocation proportion.
pub const VARIANCE_REL_TOL: f64 = 0.20;
/// Relative tolerance for entries of the estimator covariance.
pub const COVARIANCE_REL_TOL: f64 = 0.25;
pub const SE_MULTIPLIER: f64 = 3.0;
pub const MAX_ABS_SKEWNESS: f64 = 0.15;
pub const MAX_ABS_EXCESS_KURTOSIS: f64 = 0.3;
/// Normality rows are only reported from this many replications on.
pub const NORMALITY_MIN_REPLICATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub strata: bool,
    pub theta: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            strata: true,
            theta: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    template: TrialConfig,
    replications: usize,
    base_seed: u64,
    diagnostics: Diagnostics,
}

impl McConfig {
    /// The template's own seed is ignored.
    pub fn new(template: TrialConfig, replications: usize, base_seed: u64) -> Result<Self> {
        if replications < 2 {
            return Err(Error::invalid(
                "mc.replications",
                "at least 2 replications are required",
            ));
        }
        Ok(Self {
            template,
            replications,
            base_seed,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn with_diagnostics(mut self, diagnostics: Diagnostics) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn template(&self) -> &TrialConfig {
        &self.template
    }
    pub fn replications(&self) -> usize {
        self.replications
    }
    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }
    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    /// Target and exponent whose asymptotic theory describes the configured policy.
    /// Complete randomization with probability `p` behaves like a constant target at `gamma = 0`.
    pub fn theoretical_design(&self) -> Result<(TargetFunction, f64)> {
        let target = self.template.target();
        match *self.template.design().policy() {
            Policy::CompleteRandomization { p } => {
                Ok((TargetFunction::fixed(p, *target.families())?, 0.0))
            }
            Policy::Zhcc => Ok((target.clone(), 0.0)),
            Policy::Cadbcd { gamma } => Ok((target.clone(), gamma)),
        }
    }
}

/// One row of theory-versus-simulation comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub empirical: f64,
    pub theoretical: f64,
    pub std_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Comparison {
    fn new(
        name: impl Into<String>,
        empirical: f64,
        theoretical: f64,
        std_error: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            name: name.into(),
            empirical,
            theoretical,
            std_error,
            tolerance,
            pass: (empirical - theoretical).abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumRow {
    pub x: Vec<f64>,
    pub probability: f64,
    /// Mean over replications of `N_n(x)`.
    pub mean_subjects: f64,
    /// Mean over replications of `N_{n,1|x}`.
    pub mean_arm_one: f64,
    /// `mean_arm_one / mean_subjects`.
    pub proportion: f64,
    /// `pi_1(theta, x)` at the true parameters.
    pub target: f64,
    pub std_error: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaDiagnostics {
    /// Mean of `sqrt(n) (theta_hat - theta)`.
    pub mean_scaled_error: Vec<f64>,
    /// Empirical covariance of `sqrt(n) (theta_hat - theta)`.
    pub covariance: MatrixRows,
    pub covariance_se: MatrixRows,
    /// `V` from the asymptotic theory, when available.
    pub theoretical: Option<MatrixRows>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitFailures {
    pub attempts: usize,
    pub failures: usize,
    /// Replications whose final fit for some arm did not converge.
    pub replications_unconverged_at_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub replications: usize,
    pub n: usize,
    pub base_seed: u64,
    pub policy: Policy,
    /// Moments of `N_n / n`.
    pub proportion: Moments,
    /// Moments of `sqrt(n) (N_n/n - v)`.
    pub scaled_proportion: Moments,
    pub strata: Option<Vec<StratumRow>>,
    pub theta: Option<ThetaDiagnostics>,
    pub comparisons: Vec<Comparison>,
    pub fit_failures: FitFailures,
    pub theory: Option<AsymptoticSummary>,
    pub theory_error: Option<String>,
}

impl MonteCarloReport {
    pub fn all_pass(&self) -> bool {
        self.comparisons.iter().all(|c| c.pass)
    }

    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }
}

struct Outcome {
    proportion: f64,
    theta_hat: Vec<f64>,
    strata: Option<Vec<(usize, usize)>>,
    fit_attempts: usize,
    fit_failures: usize,
    unconverged: bool,
}

fn replicate(config: &McConfig, index: usize) -> Result<Outcome> {
    let mut rng = rng_from_seed(split_seed(config.base_seed, index as u64));
    let result = run_trial_with(&config.template, &mut rng)?;
    Ok(Outcome {
        proportion: result.proportion,
        theta_hat: result.theta_hat.concat(),
        strata: result
            .strata
            .map(|s| s.iter().map(|row| (row.arm_one, row.subjects)).collect()),
        fit_attempts: result.fits.attempts,
        fit_failures: result.fits.failures,
        unconverged: !result.fits.last_converged.iter().all(|c| *c),
    })
}

/// Run on the global rayon pool.
pub fn run(config: &McConfig) -> Result<MonteCarloReport> {
    let outcomes: Vec<Result<Outcome>> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, r))
        .collect();
    reduce(config, outcomes)
}

/// Run on a dedicated pool of `workers` threads (`1` runs serially on the caller).
pub fn run_with_workers(config: &McConfig, workers: usize) -> Result<MonteCarloReport> {
    if workers <= 1 {
        let outcomes = (0..config.replications)
            .map(|r| replicate(config, r))
            .collect();
        return reduce(config, outcomes);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    pool.install(|| run(config))
}

fn reduce(config: &McConfig, outcomes: Vec<Result<Outcome>>) -> Result<MonteCarloReport> {
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let template = &config.template;
    let n = template.n();
    let r = outcomes.len();
    let rf = r as f64;
    let sqrt_n = (n as f64).sqrt();

    let (theory, theory_error) = match config.theoretical_design().and_then(|(target, gamma)| {
        summary_for(template.arms(), template.covariates(), &target, gamma)
    }) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let proportions: Vec<f64> = outcomes.iter().map(|o| o.proportion).collect();
    let proportion = Moments::of(&proportions);
    let center = theory.as_ref().map_or(proportion.mean, |t| t.v);
    let scaled: Vec<f64> = proportions.iter().map(|p| sqrt_n * (p - center)).collect();
    let scaled_proportion = Moments::of(&scaled);

    let mut comparisons = Vec::new();
    if let Some(t) = &theory {
        let se = (t.sigma_sq / (n as f64 * rf)).sqrt();
        comparisons.push(Comparison::new(
            "mean_proportion",
            proportion.mean,
            t.v,
            se,
            SE_MULTIPLIER * se,
        ));
        let se = scaled_proportion.variance_se;
        comparisons.push(Comparison::new(
            "scaled_variance",
            scaled_proportion.variance,
            t.sigma_sq,
            se,
            (VARIANCE_REL_TOL * t.sigma_sq).max(SE_MULTIPLIER * se),
        ));
    }
    if r >= NORMALITY_MIN_REPLICATIONS {
        comparisons.push(Comparison::new(
            "skewness",
            scaled_proportion.skewness,
            0.0,
            (6.0 / rf).sqrt(),
            MAX_ABS_SKEWNESS,
        ));
        comparisons.push(Comparison::new(
            "excess_kurtosis",
            scaled_proportion.excess_kurtosis,
            0.0,
            (24.0 / rf).sqrt(),
            MAX_ABS_EXCESS_KURTOSIS,
        ));
    }

    let strata = if config.diagnostics.strata {
        stratum_rows(config, &outcomes)?
    } else {
        None
    };
    if let Some(rows) = &strata {
        for (i, row) in rows.iter().enumerate() {
            comparisons.push(Comparison::new(
                format!("stratum[{i}]"),
                row.proportion,
                row.target,
                row.std_error,
                SE_MULTIPLIER * row.std_error,
            ));
        }
    }

    let theta = config.diagnostics.theta.then(|| {
        let truth = template.true_theta().concat();
        let z: Vec<Vec<f64>> = outcomes
            .iter()
            .map(|o| {
                o.theta_hat
                    .iter()
                    .zip(&truth)
                    .map(|(e, t)| sqrt_n * (e - t))
                    .collect()
            })
            .collect();
        theta_diagnostics(&z, theory.as_ref().map(|t| t.v_matrix.clone()))
    });
    if let Some(th) = &theta {
        if let Some(v) = &th.theoretical {
            for (i, row) in v.iter().enumerate() {
                for (j, vij) in row.iter().enumerate() {
                    let se = th.covariance_se[i][j];
                    comparisons.push(Comparison::new(
                        format!("theta_cov[{i}][{j}]"),
                        th.covariance[i][j],
                        *vij,
                        se,
                        (COVARIANCE_REL_TOL * vij.abs()).max(SE_MULTIPLIER * se),
                    ));
                }
            }
        }
    }

    Ok(MonteCarloReport {
        replications: r,
        n,
        base_seed: config.base_seed,
        policy: *template.design().policy(),
        proportion,
        scaled_proportion,
        strata,
        theta,
        comparisons,
        fit_failures: FitFailures {
            attempts: outcomes.iter().map(|o| o.fit_attempts).sum(),
            failures: outcomes.iter().map(|o| o.fit_failures).sum(),
            replications_unconverged_at_end: outcomes.iter().filter(|o| o.unconverged).count(),
        },
        theory,
        theory_error,
    })
}

fn stratum_rows(config: &McConfig, outcomes: &[Outcome]) -> Result<Option<Vec<StratumRow>>> {
    let template = &config.template;
    let Ok(atoms) = template.covariates().enumerate_atoms() else {
        return Ok(None);
    };
    let (target, _) = config.theoretical_design()?;
    let theta = template.true_theta();
    let rf = outcomes.len() as f64;
    let rows = atoms
        .iter()
        .enumerate()
        .map(|(s, (x, prob))| {
            let counts: Vec<(f64, f64)> = outcomes
                .iter()
                .map(|o| {
                    let (a, t) = o.strata.as_ref().expect("discrete law")[s];
                    (a as f64, t as f64)
                })
                .collect();
            let mean_arm_one = compensated_sum(counts.iter().map(|c| c.0)) / rf;
            let mean_subjects = compensated_sum(counts.iter().map(|c| c.1)) / rf;
            let proportion = mean_arm_one / mean_subjects;
            // Linearised standard error of a ratio of means.
            let resid: Vec<f64> = counts
                .iter()
                .map(|(a, t)| (a - proportion * t) / mean_subjects)
                .collect();
            let std_error = Moments::of(&resid).mean_se();
            let target_value = target.evaluate_unchecked(&theta, x);
            StratumRow {
                x: x.clone(),
                probability: *prob,
                mean_subjects,
                mean_arm_one,
                proportion,
                target: target_value,
                std_error,
                deviation: proportion - target_value,
            }
        })
        .collect();
    Ok(Some(rows))
}

fn theta_diagnostics(z: &[Vec<f64>], theoretical: Option<MatrixRows>) -> ThetaDiagnostics {
    let dim = z.first().map_or(0, Vec::len);
    let rf = z.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|i| compensated_sum(z.iter().map(|row| row[i])) / rf)
        .collect();
    let mut covariance = vec![vec![0.0; dim]; dim];
    let mut covariance_se = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            let products: Vec<f64> = z
                .iter()
                .map(|row| (row[i] - mean[i]) * (row[j] - mean[j]))
                .collect();
            covariance[i][j] = compensated_sum(products.iter().copied()) / (rf - 1.0);
            covariance_se[i][j] = Moments::of(&products).mean_se();
        }
    }
    ThetaDiagnostics {
        mean_scaled_error: mean,
        covariance,
        covariance_se,
        theoretical,
    }
}

/// Per-atom comparison of mean stratum proportions with `pi_1(theta, x)`.
pub fn stratum_report(report: &MonteCarloReport) -> Result<&[StratumRow]> {
    report.strata.as_deref().ok_or(Error::NotDiscrete)
}
