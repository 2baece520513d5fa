//! Numerical self-checks run by `cara-lab validate`.

use rand::Rng;
use serde::Serialize;

use crate::asymptotics::{rho_gradient, rho_gradient_finite_difference, summary};
use crate::covariates::ExpectMode;
use crate::designs::{expansion_residual_with, g, BurnInSchedule, Design, Policy};
use crate::glm::{ArmModel, Family};
use crate::reference;
use crate::seeding::rng_from_seed;
use crate::targets::{TargetFunction, DEFAULT_FD_STEP};
use crate::Arm;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ValidationOptions {
    /// Relative perturbation of the exponent used inside `g` by the expansion
    /// check. Non-zero values are a negative control and should make it fail.
    pub g_exponent_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    /// `true` when `measured` must be at least `threshold` rather than at most.
    pub lower_bound: bool,
    pub pass: bool,
}

impl CheckOutcome {
    fn at_most(name: &'static str, measured: f64, threshold: f64) -> Self {
        Self {
            name,
            measured,
            threshold,
            lower_bound: false,
            pass: measured <= threshold,
        }
    }

    fn at_least(name: &'static str, measured: f64, threshold: f64) -> Self {
        Self {
            name,
            measured,
            threshold,
            lower_bound: true,
            pass: measured >= threshold,
        }
    }
}

const PI_GRID: [f64; 3] = [0.2, 0.5, 0.8];
const GAMMA_GRID: [f64; 3] = [0.5, 1.0, 4.0];
const PROPORTION_GRID: [f64; 9] = [0.05, 0.15, 0.25, 0.35, 0.5, 0.6, 0.75, 0.85, 0.95];

pub fn run_all(options: ValidationOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let (identity, zhcc) = variance_identities();
    out.push(CheckOutcome::at_most("variance_identity", identity, 1e-10));
    out.push(CheckOutcome::at_most(
        "zhcc_variance_consistency",
        zhcc,
        1e-10,
    ));
    out.push(CheckOutcome::at_least(
        "g_expansion_order",
        g_expansion_min_ratio(options.g_exponent_perturbation),
        3.5,
    ));
    out.push(CheckOutcome::at_most(
        "g_expansion_gamma_zero",
        g_expansion_gamma_zero(),
        0.0,
    ));
    out.push(CheckOutcome::at_most(
        "score_finite_difference",
        score_fd_error(),
        1e-6,
    ));
    out.push(CheckOutcome::at_most(
        "target_gradient_consistency",
        target_gradient_error(),
        1e-5,
    ));
    out.push(CheckOutcome::at_most(
        "rho_gradient_consistency",
        rho_gradient_error(),
        1e-4,
    ));
    out.push(CheckOutcome::at_most(
        "g_arm_symmetry",
        g_symmetry_error(),
        1e-12,
    ));
    out.push(CheckOutcome::at_most(
        "g_monotonicity_violations",
        g_monotonicity_violations(),
        0.0,
    ));
    out.push(CheckOutcome::at_most(
        "burn_in_exactness",
        burn_in_imbalance(),
        0.0,
    ));
    out.push(CheckOutcome::at_most(
        "zhcc_equivalence",
        zhcc_equivalence_error(1000),
        1e-12,
    ));
    out
}

/// `(|sigma1^2 + sigma2^2 - v(1-v)|, |sigma^2(0) - (2 sigma3^2 + v(1-v))|)` on the reference instance.
fn variance_identities() -> (f64, f64) {
    let config = reference::reference_trial(Policy::Zhcc, reference::REFERENCE_N);
    match summary(&config, 0.0) {
        Ok(s) => (
            (s.sigma1_sq + s.sigma2_sq - s.v * (1.0 - s.v)).abs(),
            (s.sigma_sq_at(0.0) - (2.0 * s.sigma3_sq + s.v * (1.0 - s.v))).abs(),
        ),
        Err(_) => (f64::INFINITY, f64::INFINITY),
    }
}

/// Smallest ratio `residual(da, db) / residual(da/2, db/2)` over the `(pi, gamma)` grid.
pub fn g_expansion_min_ratio(perturbation: f64) -> f64 {
    let v = 0.45;
    let (da, db) = (0.02, -0.015);
    let mut worst = f64::INFINITY;
    for pi in PI_GRID {
        for gamma in GAMMA_GRID {
            let gamma_g = gamma * (1.0 + perturbation);
            let r1 = expansion_residual_with(pi, v, da, db, gamma_g, gamma);
            let r2 = expansion_residual_with(pi, v, da / 2.0, db / 2.0, gamma_g, gamma);
            worst = worst.min(r1 / r2);
        }
    }
    worst
}

fn g_expansion_gamma_zero() -> f64 {
    let mut worst: f64 = 0.0;
    for pi in PI_GRID {
        for (da, db) in [(0.1, -0.05), (-0.2, 0.3), (0.01, 0.0)] {
            worst = worst.max(crate::designs::g_expansion_residual(pi, 0.45, da, db, 0.0));
        }
    }
    worst
}

fn score_fd_error() -> f64 {
    let mut rng = rng_from_seed(0x5C0E);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let family = match i % 3 {
            0 => Family::BernoulliLogit,
            1 => Family::PoissonLog,
            _ => Family::NormalIdentity { phi: 1.3 },
        };
        let theta: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let x = [1.0, rng.random_range(-1.0..1.0)];
        let model = ArmModel::with_default_box(family, theta.clone()).expect("in box");
        let y = model.sample_response(&x, &mut rng).expect("dims");
        let score = model.score(&x, y).expect("support");
        for j in 0..2 {
            let at = |delta: f64| {
                let mut t = theta.clone();
                t[j] += delta;
                model
                    .with_theta(t)
                    .expect("dims")
                    .log_density(&x, y)
                    .expect("support")
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max((fd - score[j]).abs());
        }
    }
    worst
}

fn target_gradient_error() -> f64 {
    let mut rng = rng_from_seed(0x7A76);
    let target = TargetFunction::rsihr_binary();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta = [
            vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        ];
        let x = [1.0, rng.random_range(-1.0..1.0)];
        let a = target.analytic_gradient(&theta, &x).expect("dims");
        let f = target
            .finite_difference_gradient(&theta, &x, DEFAULT_FD_STEP)
            .expect("dims");
        for (u, v) in a.iter().zip(&f) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

fn rho_gradient_error() -> f64 {
    let config = reference::reference_trial(Policy::Zhcc, reference::REFERENCE_N);
    let rule = config.covariates().integration_rule(ExpectMode::Auto);
    let theta = config.true_theta();
    let a = rho_gradient(config.target(), &theta, &rule);
    let f = rho_gradient_finite_difference(config.target(), &theta, &rule, DEFAULT_FD_STEP);
    a.iter()
        .zip(&f)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn g_symmetry_error() -> f64 {
    let mut worst: f64 = 0.0;
    for pi in PROPORTION_GRID {
        for a in PROPORTION_GRID {
            for b in PROPORTION_GRID {
                for gamma in [0.0, 0.5, 1.0, 4.0, 25.0] {
                    let s = g(pi, a, b, gamma) + g(1.0 - pi, 1.0 - a, 1.0 - b, gamma);
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
    }
    worst
}

fn g_monotonicity_violations() -> f64 {
    let mut violations = 0usize;
    for pi in PROPORTION_GRID {
        for gamma in [0.25, 1.0, 4.0, 16.0] {
            for fixed in PROPORTION_GRID {
                for w in PROPORTION_GRID.windows(2) {
                    if g(pi, fixed, w[1], gamma) < g(pi, fixed, w[0], gamma) {
                        violations += 1;
                    }
                    if g(pi, w[1], fixed, gamma) > g(pi, w[0], fixed, gamma) {
                        violations += 1;
                    }
                }
            }
        }
    }
    violations as f64
}

/// Largest `|N_{2m0,1} - m0|` over many burn-in schedules.
fn burn_in_imbalance() -> f64 {
    let mut rng = rng_from_seed(0xB0B);
    let mut worst = 0usize;
    for m0 in 1..=8 {
        for _ in 0..250 {
            let s = BurnInSchedule::new(m0, &mut rng);
            let ones = (1..=2 * m0)
                .filter(|m| s.assignment(*m).map(|a| a == Arm::One).unwrap_or(false))
                .count();
            worst = worst.max(ones.abs_diff(m0));
        }
    }
    worst as f64
}

/// Largest difference between CADBCD(0) and ZHCC allocation probabilities over random states.
pub fn zhcc_equivalence_error(states: usize) -> f64 {
    let config = reference::reference_trial(Policy::Zhcc, 40);
    let zhcc = Design::new(Policy::Zhcc, reference::REFERENCE_BURN_IN).expect("valid");
    let cadbcd =
        Design::new(Policy::Cadbcd { gamma: 0.0 }, reference::REFERENCE_BURN_IN).expect("valid");
    let mut rng = rng_from_seed(0x2E40);
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let mut state = crate::trial::TrialState::new(&config, &mut rng);
        let steps = rng.random_range(config.design().burn_in_len()..config.n());
        for _ in 0..steps {
            state.step(&config, &mut rng).expect("valid step");
        }
        let theta = [
            vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        ];
        state.set_estimates(theta, rng.random_range(0.01..0.99));
        let xi = config.covariates().sample(&mut rng);
        let a = zhcc
            .allocation_probability(&state, &xi, config.target())
            .expect("after burn-in");
        let b = cadbcd
            .allocation_probability(&state, &xi, config.target())
            .expect("after burn-in");
        worst = worst.max((a - b).abs());
    }
    worst
}
