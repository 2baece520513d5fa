//! Acceptance suite: theory versus replicated simulation on the two-arm logistic
//! reference instance, plus exact identities and derivative oracles.
//!
//! Run with `cargo test -p cara-core --test acceptance -- --nocapture` to see one
//! PASS/FAIL line per criterion.

use std::sync::OnceLock;
use std::time::Instant;

use cara_core::asymptotics::{self, AsymptoticSummary};
use cara_core::designs::{g_expansion_residual, Policy};
use cara_core::glm::{logistic, Family};
use cara_core::montecarlo::{self, McConfig, MonteCarloReport};
use cara_core::reference::{self, REFERENCE_N, REFERENCE_REPLICATIONS};
use cara_core::targets::TargetFunction;
use cara_core::trial::run_trial;
use cara_core::validation;

const BASE_SEED: u64 = 20_260_101;

fn line(criterion: &str, pass: bool, detail: String) -> bool {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// Independent evaluation of the reference-instance theory: closed-form RSIHR
/// derivatives, hand-inverted 2x2 informations, explicit sums over the two atoms.
struct Oracle {
    v: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
    sigma3_sq: f64,
    v_blocks: [[[f64; 2]; 2]; 2],
}

fn oracle() -> Oracle {
    let atoms = [([1.0, 0.0], 0.5), ([1.0, 1.0], 0.5)];
    let (mut v, mut s1, mut e2) = (0.0, 0.0, 0.0);
    let mut grad = [[0.0; 2]; 2];
    let mut info = [[[0.0; 2]; 2]; 2];
    for (x, w) in atoms {
        let p1 = logistic(0.5 * x[0] + 0.5 * x[1]);
        let p2 = logistic(-0.5 * x[0] + 0.5 * x[1]);
        let pi = p1.sqrt() / (p1.sqrt() + p2.sqrt());
        v += w * pi;
        s1 += w * pi * (1.0 - pi);
        e2 += w * pi * pi;
        for j in 0..2 {
            grad[0][j] += w * pi * (1.0 - pi) * (1.0 - p1) / 2.0 * x[j];
            grad[1][j] -= w * pi * (1.0 - pi) * (1.0 - p2) / 2.0 * x[j];
            for k in 0..2 {
                info[0][j][k] += w * pi * p1 * (1.0 - p1) * x[j] * x[k];
                info[1][j][k] += w * (1.0 - pi) * p2 * (1.0 - p2) * x[j] * x[k];
            }
        }
    }
    let mut v_blocks = [[[0.0; 2]; 2]; 2];
    let mut s3 = 0.0;
    for arm in 0..2 {
        let [[a, b], [_, c]] = info[arm];
        let det = a * c - b * b;
        let inv = [[c / det, -b / det], [-b / det, a / det]];
        v_blocks[arm] = inv;
        let g = grad[arm];
        s3 += g[0] * (inv[0][0] * g[0] + inv[0][1] * g[1])
            + g[1] * (inv[1][0] * g[0] + inv[1][1] * g[1]);
    }
    Oracle {
        v,
        sigma1_sq: s1,
        sigma2_sq: e2 - v * v,
        sigma3_sq: s3,
        v_blocks,
    }
}

fn theory() -> &'static AsymptoticSummary {
    static THEORY: OnceLock<AsymptoticSummary> = OnceLock::new();
    THEORY.get_or_init(|| {
        asymptotics::summary(&reference::reference_trial(Policy::Zhcc, REFERENCE_N), 0.0)
            .expect("nonsingular")
    })
}

/// Reference-instance Monte Carlo report at `gamma`, computed once per test binary.
fn mc(gamma: f64) -> &'static MonteCarloReport {
    static CACHE: [OnceLock<MonteCarloReport>; 4] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    let slot = match gamma {
        0.0 => 0,
        1.0 => 1,
        4.0 => 2,
        8.0 => 3,
        _ => panic!("no cached run for gamma {gamma}"),
    };
    CACHE[slot].get_or_init(|| {
        let template = reference::reference_trial(Policy::Cadbcd { gamma }, REFERENCE_N);
        let config = McConfig::new(template, REFERENCE_REPLICATIONS, BASE_SEED).unwrap();
        montecarlo::run(&config).unwrap()
    })
}

#[test]
fn c0_reference_theory_matches_independent_oracle() {
    let s = theory();
    let o = oracle();
    let mut ok = true;
    for (name, got, want) in [
        ("v", s.v, o.v),
        ("sigma1_sq", s.sigma1_sq, o.sigma1_sq),
        ("sigma2_sq", s.sigma2_sq, o.sigma2_sq),
        ("sigma3_sq", s.sigma3_sq, o.sigma3_sq),
    ] {
        ok &= line(
            "C0 oracle",
            (got - want).abs() < 1e-12,
            format!("{name} {got:.15} vs oracle {want:.15}"),
        );
    }
    for arm in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let got = s.v_matrix[2 * arm + i][2 * arm + j];
                ok &= (got - o.v_blocks[arm][i][j]).abs() < 1e-10;
            }
        }
    }
    ok &= line("C0 oracle", ok, "V blocks agree to 1e-10".into());
    // 40-digit evaluation of the same quantities, frozen.
    for (name, got, want) in [
        ("v", s.v, 0.554_759_967_012_771_053_677),
        ("sigma1_sq", s.sigma1_sq, 0.246_946_341_038_070_468_424),
        ("sigma2_sq", s.sigma2_sq, 0.000_055_004_974_689_757_619_806),
        ("sigma3_sq", s.sigma3_sq, 0.058_795_396_518_859_847_614),
    ] {
        ok &= line(
            "C0 frozen",
            (got - want).abs() < 1e-12,
            format!("{name} {got:.15} vs {want:.15}"),
        );
    }
    assert!(ok);
}

#[test]
fn c1_zhcc_equivalence() {
    let start = Instant::now();
    let err = validation::zhcc_equivalence_error(1000);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = err <= 1e-12 && elapsed < 1.0;
    assert!(line(
        "C1 ZHCC equivalence",
        pass,
        format!("max |CADBCD(0) - ZHCC| = {err:e} over 1000 states in {elapsed:.3}s")
    ));
}

#[test]
fn c2_mean_convergence() {
    let mut ok = true;
    for gamma in [0.0, 1.0, 4.0] {
        let report = mc(gamma);
        let s = theory().at_gamma(gamma);
        let se = (s.sigma_sq / (REFERENCE_N * REFERENCE_REPLICATIONS) as f64).sqrt();
        let dev = (report.proportion.mean - s.v).abs();
        ok &= line(
            "C2 mean convergence",
            dev < 3.0 * se,
            format!(
                "gamma={gamma}: mean N/n {:.6} vs v {:.6}, |dev| {dev:.2e} < 3 SE {:.2e}",
                report.proportion.mean,
                s.v,
                3.0 * se
            ),
        );
    }
    assert!(ok);
}

#[test]
fn c3_stratum_convergence() {
    let report = mc(1.0);
    let rows = montecarlo::stratum_report(report).unwrap();
    let target = TargetFunction::rsihr_binary();
    let theta = reference::reference_trial(Policy::Zhcc, REFERENCE_N).true_theta();
    let mut ok = rows.len() == 2;
    for row in rows {
        let pi = target.evaluate(&theta, &row.x).unwrap();
        ok &= line(
            "C3 stratum convergence",
            (row.proportion - pi).abs() < 3.0 * row.std_error,
            format!(
                "x={:?}: {:.5} vs pi_1 {:.5} (3 SE {:.2e})",
                row.x,
                row.proportion,
                pi,
                3.0 * row.std_error
            ),
        );
    }
    assert!(ok);
}

#[test]
fn c4_variance_and_ordering() {
    let mut ok = true;
    let mut observed = Vec::new();
    for gamma in [0.0, 1.0, 4.0] {
        let report = mc(gamma);
        let sigma_sq = theory().sigma_sq_at(gamma);
        let var = report.scaled_proportion.variance;
        let se = report.scaled_proportion.variance_se;
        let tol = (0.2 * sigma_sq).max(3.0 * se);
        ok &= line(
            "C4 variance",
            (var - sigma_sq).abs() <= tol,
            format!(
                "gamma={gamma}: Var {var:.5} vs sigma^2 {sigma_sq:.5} (tol {tol:.5}, SE {se:.5})"
            ),
        );
        observed.push((gamma, var, se));
    }
    for w in observed.windows(2) {
        let (g0, v0, s0) = w[0];
        let (g1, v1, s1) = w[1];
        let pooled = (s0 * s0 + s1 * s1).sqrt();
        ok &= line(
            "C4 ordering",
            v0 > v1 - 2.0 * pooled,
            format!(
                "Var(gamma={g0}) {v0:.5} > Var(gamma={g1}) {v1:.5} (2 pooled SE {:.5})",
                2.0 * pooled
            ),
        );
    }
    assert!(ok);
}

#[test]
fn c5_efficiency_bound_analytic() {
    let s = theory();
    let gap = s.sigma_sq_at(100.0) - s.b;
    assert!(line(
        "C5 efficiency bound (analytic)",
        gap < 0.02 * s.b,
        format!(
            "sigma^2(100) - B = {gap:.6e} vs 0.02 B = {:.6e}",
            0.02 * s.b
        )
    ));
}

#[test]
fn c5_efficiency_bound_empirical() {
    let s = theory();
    let drop = mc(0.0).scaled_proportion.variance - mc(8.0).scaled_proportion.variance;
    let half_gap = 0.5 * (s.sigma_sq_at(0.0) - s.sigma_sq_at(8.0));
    assert!(line(
        "C5 efficiency bound (empirical)",
        drop >= half_gap,
        format!("Var(0) - Var(8) = {drop:.5} >= half theoretical gap {half_gap:.5}")
    ));
}

#[test]
fn c6_mle_covariance() {
    let report = mc(1.0);
    let theta = report.theta.as_ref().unwrap();
    let v = theta.theoretical.as_ref().unwrap();
    let mut ok = true;
    for (i, row) in v.iter().enumerate() {
        for (j, vij) in row.iter().enumerate() {
            let emp = theta.covariance[i][j];
            let se = theta.covariance_se[i][j];
            let tol = (0.25 * vij.abs()).max(3.0 * se);
            ok &= line(
                "C6 MLE covariance",
                (emp - vij).abs() <= tol,
                format!("[{i}][{j}] {emp:.4} vs V {vij:.4} (tol {tol:.4})"),
            );
        }
    }
    assert!(ok);
}

#[test]
fn c7_exact_identities() {
    let s = theory();
    let mut ok = line(
        "C7 identity",
        (s.sigma1_sq + s.sigma2_sq - s.v * (1.0 - s.v)).abs() < 1e-10,
        format!(
            "sigma1^2 + sigma2^2 - v(1-v) = {:e}",
            s.sigma1_sq + s.sigma2_sq - s.v * (1.0 - s.v)
        ),
    );
    let zhcc = 2.0 * s.sigma3_sq + s.v * (1.0 - s.v);
    ok &= line(
        "C7 identity",
        (s.sigma_sq_at(0.0) - zhcc).abs() < 1e-10,
        format!(
            "sigma^2(0) - (2 sigma3^2 + v(1-v)) = {:e}",
            s.sigma_sq_at(0.0) - zhcc
        ),
    );
    let arms = reference::reference_arms();
    let cov = reference::reference_covariates();
    let mut worst: f64 = 0.0;
    let mut b_max: f64 = 0.0;
    for c in [0.2, 0.5, 0.7] {
        let target = TargetFunction::fixed(c, [Family::BernoulliLogit; 2]).unwrap();
        let fs = asymptotics::summary_for(&arms, &cov, &target, 0.0).unwrap();
        b_max = b_max.max(fs.b.abs());
        for gamma in [0.0, 0.5, 1.0, 4.0, 8.0, 100.0] {
            worst = worst.max((fs.sigma_sq_at(gamma) - c * (1.0 - c) / (1.0 + 2.0 * gamma)).abs());
        }
    }
    ok &= line(
        "C7 fixed target",
        worst < 1e-12 && b_max < 1e-12,
        format!("max |sigma^2 - c(1-c)/(1+2 gamma)| = {worst:e}, max |B| = {b_max:e}"),
    );
    assert!(ok);
}

#[test]
fn c8_g_expansion_order() {
    let mut ok = true;
    let v = 0.45;
    for pi in [0.2, 0.5, 0.8] {
        for gamma in [0.5, 1.0, 4.0] {
            let mut ratios = Vec::new();
            let (mut da, mut db) = (0.04, -0.03);
            for _ in 0..4 {
                ratios.push(
                    g_expansion_residual(pi, v, da, db, gamma)
                        / g_expansion_residual(pi, v, da / 2.0, db / 2.0, gamma),
                );
                da /= 2.0;
                db /= 2.0;
            }
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            ok &= line(
                "C8 expansion order",
                min >= 3.5,
                format!("pi={pi} gamma={gamma}: min halving ratio {min:.3}"),
            );
        }
        let zero = g_expansion_residual(pi, v, 0.1, -0.07, 0.0);
        ok &= line(
            "C8 gamma=0",
            zero == 0.0,
            format!("pi={pi}: residual {zero:e}"),
        );
    }
    assert!(ok);
}

#[test]
fn c9_derivative_oracles() {
    let checks = validation::run_all(validation::ValidationOptions::default());
    let get = |name: &str| checks.iter().find(|c| c.name == name).unwrap().measured;
    let score = get("score_finite_difference");
    let target = get("target_gradient_consistency");
    let rho = get("rho_gradient_consistency");
    let mut ok = line(
        "C9 score",
        score <= 1e-6,
        format!("max |score - FD| = {score:e}"),
    );
    ok &= line(
        "C9 target gradient",
        target <= 1e-5,
        format!("max |analytic - FD| = {target:e}"),
    );
    ok &= line(
        "C9 rho gradient",
        rho <= 1e-4,
        format!("max |E[grad] - FD rho| = {rho:e}"),
    );

    assert!(ok);
}

#[test]
fn c10_determinism_and_parallelism() {
    let config =
        reference::reference_trial(Policy::Cadbcd { gamma: 2.0 }, REFERENCE_N).with_seed(99);
    let a = serde_json::to_string(&run_trial(&config).unwrap()).unwrap();
    let b = serde_json::to_string(&run_trial(&config).unwrap()).unwrap();
    let mut ok = line(
        "C10 trial determinism",
        a == b,
        format!("{} bytes", a.len()),
    );

    let mc_config = McConfig::new(
        reference::reference_trial(Policy::Cadbcd { gamma: 1.0 }, 500),
        200,
        7,
    )
    .unwrap();
    let serial =
        serde_json::to_string(&montecarlo::run_with_workers(&mc_config, 1).unwrap()).unwrap();
    let again =
        serde_json::to_string(&montecarlo::run_with_workers(&mc_config, 1).unwrap()).unwrap();
    let eight =
        serde_json::to_string(&montecarlo::run_with_workers(&mc_config, 8).unwrap()).unwrap();
    ok &= line(
        "C10 report determinism",
        serial == again,
        format!("{} bytes", serial.len()),
    );
    ok &= line(
        "C10 worker invariance",
        serial == eight,
        "1 vs 8 workers".into(),
    );
    assert!(ok);
}

#[test]
fn c11_normality() {
    let m = mc(1.0).scaled_proportion;
    let mut ok = line(
        "C11 skewness",
        m.skewness.abs() < 0.15,
        format!("{:.4}", m.skewness),
    );
    ok &= line(
        "C11 excess kurtosis",
        m.excess_kurtosis.abs() < 0.3,
        format!("{:.4}", m.excess_kurtosis),
    );
    assert!(ok);
}
