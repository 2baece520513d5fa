//! Sequential simulation of one two-arm trial.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::covariates::CovariateDistribution;
use crate::designs::{BurnInSchedule, Design};
use crate::error::{check_dim, Error, Result};
use crate::glm::{fit_mle, ArmData, ArmModel};
use crate::seeding::{rng_from_seed, SimRng};
use crate::stats::CompensatedSum;
use crate::targets::TargetFunction;
use crate::{Arm, ThetaPair};

/// Growth factor of the snapshot grid.
const SNAPSHOT_GROWTH: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct TrialConfig {
    n: usize,
    arms: [ArmModel; 2],
    covariates: CovariateDistribution,
    target: TargetFunction,
    design: Design,
    refit_stride: usize,
    seed: u64,
    initial_theta: ThetaPair,
    record_history: bool,
}

impl TrialConfig {
    /// Validated configuration with defaults: `refit_stride = 1`, seed 0, initial
    /// estimate at the centre of each parameter box, no history retention.
    pub fn new(
        arms: [ArmModel; 2],
        covariates: CovariateDistribution,
        target: TargetFunction,
        design: Design,
        n: usize,
    ) -> Result<Self> {
        let d = covariates.dim();
        for arm in &arms {
            check_dim(d, arm.dim())?;
        }
        if target.families() != &[*arms[0].family(), *arms[1].family()] {
            return Err(Error::invalid(
                "target",
                "target families differ from the arm families",
            ));
        }
        if n <= design.burn_in_len() {
            return Err(Error::invalid(
                "trial.n",
                format!(
                    "horizon must exceed the burn-in length {}",
                    design.burn_in_len()
                ),
            ));
        }
        let initial_theta = [arms[0].bounds().center(), arms[1].bounds().center()];
        Ok(Self {
            n,
            arms,
            covariates,
            target,
            design,
            refit_stride: 1,
            seed: 0,
            initial_theta,
            record_history: false,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_refit_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("trial.refit_stride", "must be at least 1"));
        }
        self.refit_stride = stride;
        Ok(self)
    }

    pub fn with_history(mut self, record: bool) -> Self {
        self.record_history = record;
        self
    }

    pub fn with_initial_theta(mut self, theta: ThetaPair) -> Result<Self> {
        for (arm, t) in self.arms.iter().zip(&theta) {
            if !arm.bounds().contains(t) {
                return Err(Error::invalid(
                    "initial_theta",
                    "must lie inside the parameter box",
                ));
            }
        }
        self.initial_theta = theta;
        Ok(self)
    }

    pub fn with_design(mut self, design: Design) -> Result<Self> {
        if self.n <= design.burn_in_len() {
            return Err(Error::invalid(
                "trial.n",
                "horizon must exceed the burn-in length",
            ));
        }
        self.design = design;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn arms(&self) -> &[ArmModel; 2] {
        &self.arms
    }
    pub fn covariates(&self) -> &CovariateDistribution {
        &self.covariates
    }
    pub fn target(&self) -> &TargetFunction {
        &self.target
    }
    pub fn design(&self) -> &Design {
        &self.design
    }
    pub fn refit_stride(&self) -> usize {
        self.refit_stride
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn initial_theta(&self) -> &ThetaPair {
        &self.initial_theta
    }
    pub fn records_history(&self) -> bool {
        self.record_history
    }

    /// True coefficient pair.
    pub fn true_theta(&self) -> ThetaPair {
        [self.arms[0].theta().to_vec(), self.arms[1].theta().to_vec()]
    }

    /// Snapshot sizes: `2 m0`, then repeatedly `ceil(1.5 m)`, and always `n`.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut m = self.design.burn_in_len();
        while m < self.n {
            out.push(m);
            m = ((m as f64) * SNAPSHOT_GROWTH).ceil() as usize;
        }
        out.push(self.n);
        out
    }
}

/// Per-atom counters for discrete covariate laws.
#[derive(Debug, Clone)]
struct Strata {
    atoms: Vec<(Vec<f64>, f64)>,
    index: HashMap<Vec<u64>, usize>,
    counts: Vec<[usize; 2]>,
}

impl Strata {
    fn new(dist: &CovariateDistribution) -> Option<Self> {
        let atoms = dist.enumerate_atoms().ok()?;
        let index = atoms
            .iter()
            .enumerate()
            .map(|(i, (x, _))| (bits(x), i))
            .collect();
        let counts = vec![[0, 0]; atoms.len()];
        Some(Self {
            atoms,
            index,
            counts,
        })
    }

    fn locate(&self, x: &[f64]) -> usize {
        self.index[&bits(x)]
    }
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Full sequential history of a trial in progress.
#[derive(Debug, Clone)]
pub struct TrialState {
    m: usize,
    data: [ArmData; 2],
    assignments: Vec<Arm>,
    counts: [usize; 2],
    covariates: Vec<Vec<f64>>,
    strata: Option<Strata>,
    stratum_of: Vec<usize>,
    allocation_probabilities: Vec<Option<f64>>,
    theta_hat: ThetaPair,
    rho_hat: f64,
    stale: [bool; 2],
    last_converged: [bool; 2],
    fit_attempts: usize,
    fit_failures: usize,
    burn_in: BurnInSchedule,
}

impl TrialState {
    /// Empty state; draws the burn-in permutation from `rng`.
    pub fn new<R: Rng + ?Sized>(config: &TrialConfig, rng: &mut R) -> Self {
        let d = config.covariates.dim();
        let theta_hat = config.initial_theta.clone();
        Self {
            m: 0,
            data: [ArmData::new(d), ArmData::new(d)],
            assignments: Vec::with_capacity(config.n),
            counts: [0, 0],
            covariates: Vec::with_capacity(config.n),
            strata: Strata::new(&config.covariates),
            stratum_of: Vec::new(),
            allocation_probabilities: Vec::with_capacity(config.n),
            rho_hat: 0.5,
            theta_hat,
            stale: [false, false],
            last_converged: [false, false],
            fit_attempts: 0,
            fit_failures: 0,
            burn_in: BurnInSchedule::new(config.design.burn_in(), rng),
        }
    }

    /// Subjects enrolled so far (`m`).
    pub fn subjects(&self) -> usize {
        self.m
    }

    /// `(N_{m,1}, N_{m,2})`.
    pub fn counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn theta_hat(&self) -> &ThetaPair {
        &self.theta_hat
    }

    pub fn rho_hat(&self) -> f64 {
        self.rho_hat
    }

    pub fn arm_data(&self, arm: Arm) -> &ArmData {
        &self.data[arm.index()]
    }

    pub fn assignments(&self) -> &[Arm] {
        &self.assignments
    }

    pub fn covariate_history(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    /// Probability of arm 1 used for each subject (`None` during burn-in).
    pub fn allocation_probabilities(&self) -> &[Option<f64>] {
        &self.allocation_probabilities
    }

    /// `(atom, N_{m,1|x}, N_{m,2|x})` for discrete covariate laws.
    pub fn stratum_counts(&self) -> Option<Vec<(&[f64], [usize; 2])>> {
        self.strata.as_ref().map(|s| {
            s.atoms
                .iter()
                .zip(&s.counts)
                .map(|((x, _), c)| (x.as_slice(), *c))
                .collect()
        })
    }

    /// Replaces the current estimates (for driving allocation probabilities directly).
    pub fn set_estimates(&mut self, theta_hat: ThetaPair, rho_hat: f64) {
        self.theta_hat = theta_hat;
        self.rho_hat = rho_hat;
    }

    /// Enrol subject `m + 1`: covariate, allocation, response, and estimate updates.
    pub fn step<R: Rng + ?Sized>(&mut self, config: &TrialConfig, rng: &mut R) -> Result<()> {
        if self.m >= config.n {
            return Err(Error::invalid("trial", "horizon already reached"));
        }
        let xi = config.covariates.sample(rng);
        let next = self.m + 1;
        let burn_in_len = config.design.burn_in_len();
        let (arm, psi) = if next <= burn_in_len {
            (self.burn_in.assignment(next)?, None)
        } else {
            let p = config
                .design
                .allocation_probability(self, &xi, &config.target)?;
            let arm = if rng.random_bool(p) {
                Arm::One
            } else {
                Arm::Two
            };
            (arm, Some(p))
        };
        let k = arm.index();
        let y = config.arms[k].sample_response(&xi, rng)?;
        self.data[k].push(config.arms[k].family(), &xi, y)?;
        self.counts[k] += 1;
        if let Some(strata) = &mut self.strata {
            let s = strata.locate(&xi);
            strata.counts[s][k] += 1;
            self.stratum_of.push(s);
        }
        self.covariates.push(xi);
        self.assignments.push(arm);
        self.allocation_probabilities.push(psi);
        self.m = next;
        self.stale[k] = true;

        if next == burn_in_len || (next > burn_in_len && next.is_multiple_of(config.refit_stride)) {
            self.refit(config);
        }
        Ok(())
    }

    fn refit(&mut self, config: &TrialConfig) {
        for arm in Arm::BOTH {
            let k = arm.index();
            if !self.stale[k] {
                continue;
            }
            let model = &config.arms[k];
            let fit = fit_mle(
                model.family(),
                model.bounds(),
                &self.data[k],
                &self.theta_hat[k],
            );
            self.fit_attempts += 1;
            if !fit.converged {
                self.fit_failures += 1;
            }
            self.last_converged[k] = fit.converged;
            self.theta_hat[k] = fit.theta;
            self.stale[k] = false;
        }
        self.rho_hat = self.compute_rho_hat(&config.target);
    }

    /// `(1/m) sum_i pi_1(theta_hat_m, xi_i)` over every enrolled subject.
    ///
    /// For discrete laws the sum is grouped by atom, which is the same quantity.
    fn compute_rho_hat(&self, target: &TargetFunction) -> f64 {
        let mut acc = CompensatedSum::default();
        match &self.strata {
            Some(strata) => {
                for ((x, _), c) in strata.atoms.iter().zip(&strata.counts) {
                    let total = c[0] + c[1];
                    if total > 0 {
                        acc.add(total as f64 * target.evaluate_unchecked(&self.theta_hat, x));
                    }
                }
            }
            None => {
                for x in &self.covariates {
                    acc.add(target.evaluate_unchecked(&self.theta_hat, x));
                }
            }
        }
        acc.value() / self.m as f64
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            m: self.m,
            proportion: self.counts[0] as f64 / self.m as f64,
            rho_hat: self.rho_hat,
        }
    }

    /// Summarise the finished trial.
    pub fn finish(self, config: &TrialConfig, snapshots: Vec<Snapshot>) -> TrialResult {
        let n = self.m;
        let late_start = n / 2;
        let strata = self.strata.as_ref().map(|strata| {
            let mut psi_sum = vec![CompensatedSum::default(); strata.atoms.len()];
            let mut psi_count = vec![0usize; strata.atoms.len()];
            for (i, psi) in self
                .allocation_probabilities
                .iter()
                .enumerate()
                .skip(late_start)
            {
                if let Some(p) = psi {
                    let s = self.stratum_of[i];
                    psi_sum[s].add(*p);
                    psi_count[s] += 1;
                }
            }
            strata
                .atoms
                .iter()
                .zip(&strata.counts)
                .enumerate()
                .map(|(s, ((x, prob), c))| {
                    let subjects = c[0] + c[1];
                    StratumSummary {
                        x: x.clone(),
                        probability: *prob,
                        subjects,
                        arm_one: c[0],
                        proportion: (subjects > 0).then(|| c[0] as f64 / subjects as f64),
                        late_mean_allocation: (psi_count[s] > 0)
                            .then(|| psi_sum[s].value() / psi_count[s] as f64),
                    }
                })
                .collect()
        });
        let history = config.record_history.then(|| History {
            intercept_mask: config.covariates.intercept_mask(),
            covariates: self.covariates.clone(),
            assignments: self.assignments.clone(),
            allocation_probabilities: self.allocation_probabilities.clone(),
        });
        TrialResult {
            n,
            counts: self.counts,
            proportion: self.counts[0] as f64 / n as f64,
            theta_hat: self.theta_hat,
            rho_hat: self.rho_hat,
            strata,
            snapshots,
            fits: FitSummary {
                attempts: self.fit_attempts,
                failures: self.fit_failures,
                last_converged: self.last_converged,
            },
            history,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub m: usize,
    /// `N_{m,1} / m`.
    pub proportion: f64,
    pub rho_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSummary {
    pub x: Vec<f64>,
    pub probability: f64,
    /// `N_n(x)`.
    pub subjects: usize,
    /// `N_{n,1|x}`.
    pub arm_one: usize,
    /// `N_{n,1|x} / N_n(x)`; absent for an unvisited atom.
    pub proportion: Option<f64>,
    /// Mean allocation probability of arm 1 for this atom over the second half of the trial.
    pub late_mean_allocation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub attempts: usize,
    /// Fits that fell back to the warm start.
    pub failures: usize,
    pub last_converged: [bool; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub intercept_mask: Vec<bool>,
    pub covariates: Vec<Vec<f64>>,
    pub assignments: Vec<Arm>,
    pub allocation_probabilities: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub n: usize,
    pub counts: [usize; 2],
    /// `N_{n,1} / n`.
    pub proportion: f64,
    pub theta_hat: ThetaPair,
    pub rho_hat: f64,
    pub strata: Option<Vec<StratumSummary>>,
    pub snapshots: Vec<Snapshot>,
    pub fits: FitSummary,
    pub history: Option<History>,
}

/// Run a full trial of `config.n()` subjects from the configured seed.
pub fn run_trial(config: &TrialConfig) -> Result<TrialResult> {
    let mut rng = rng_from_seed(config.seed);
    run_trial_with(config, &mut rng)
}

pub fn run_trial_with(config: &TrialConfig, rng: &mut SimRng) -> Result<TrialResult> {
    let mut state = TrialState::new(config, rng);
    let checkpoints = config.checkpoints();
    let mut next_checkpoint = checkpoints.iter().peekable();
    let mut snapshots = Vec::with_capacity(checkpoints.len());
    while state.m < config.n {
        state.step(config, rng)?;
        if next_checkpoint.peek() == Some(&&state.m) {
            snapshots.push(state.snapshot());
            next_checkpoint.next();
        }
    }
    Ok(state.finish(config, snapshots))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallCount {
    /// `N_{n,1|B(x,r)}`.
    pub arm_one: usize,
    /// `N_n(B(x,r))`.
    pub subjects: usize,
    /// Absent when the ball holds no subject.
    pub ratio: Option<f64>,
}

/// Arm-1 share among subjects whose covariate lies within distance `radius` of `center`,
/// measured on the non-intercept coordinates. Requires a result with recorded history.
pub fn ball_proportion(result: &TrialResult, center: &[f64], radius: f64) -> Result<BallCount> {
    let history = result
        .history
        .as_ref()
        .ok_or_else(|| Error::invalid("history", "trial was run without history retention"))?;
    check_dim(history.intercept_mask.len(), center.len())?;
    if !(radius > 0.0) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    let mut arm_one = 0;
    let mut subjects = 0;
    for (x, arm) in history.covariates.iter().zip(&history.assignments) {
        let dist2: f64 = x
            .iter()
            .zip(center)
            .zip(&history.intercept_mask)
            .filter(|(_, intercept)| !**intercept)
            .map(|((a, b), _)| (a - b) * (a - b))
            .sum();
        if dist2.sqrt() <= radius {
            subjects += 1;
            if *arm == Arm::One {
                arm_one += 1;
            }
        }
    }
    Ok(BallCount {
        arm_one,
        subjects,
        ratio: (subjects > 0).then(|| arm_one as f64 / subjects as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateComponent;
    use crate::designs::Policy;
    use crate::glm::Family;
    use crate::reference;

    fn fixed_config(c: f64, policy: Policy, n: usize) -> TrialConfig {
        let arms = reference::reference_arms();
        let target = TargetFunction::fixed(c, [Family::BernoulliLogit; 2]).unwrap();
        TrialConfig::new(
            arms,
            reference::reference_covariates(),
            target,
            Design::new(policy, 5).unwrap(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn burn_in_counts_are_exact() {
        let config = reference::reference_trial(Policy::Cadbcd { gamma: 1.0 }, 300).with_seed(3);
        let mut rng = rng_from_seed(3);
        let mut state = TrialState::new(&config, &mut rng);
        for _ in 0..10 {
            state.step(&config, &mut rng).unwrap();
        }
        assert_eq!(state.counts(), [5, 5]);
        assert!(state.allocation_probabilities().iter().all(Option::is_none));
    }

    #[test]
    fn constant_target_zhcc_uses_constant_probability() {
        let config = fixed_config(0.3, Policy::Cadbcd { gamma: 0.0 }, 400)
            .with_seed(1)
            .with_history(true);
        let result = run_trial(&config).unwrap();
        let psi: Vec<f64> = result
            .history
            .unwrap()
            .allocation_probabilities
            .into_iter()
            .flatten()
            .collect();
        assert_eq!(psi.len(), 390);
        assert!(psi.iter().all(|p| *p == 0.3));
    }

    #[test]
    fn same_seed_same_result() {
        let config = reference::reference_trial(Policy::Cadbcd { gamma: 2.0 }, 500).with_seed(77);
        assert_eq!(run_trial(&config).unwrap(), run_trial(&config).unwrap());
        let other = run_trial(&config.clone().with_seed(78)).unwrap();
        assert_ne!(run_trial(&config).unwrap(), other);
    }

    #[test]
    fn conservation_and_bounds() {
        let config = reference::reference_trial(Policy::Cadbcd { gamma: 1.0 }, 800).with_seed(5);
        let r = run_trial(&config).unwrap();
        assert_eq!(r.counts[0] + r.counts[1], 800);
        let strata = r.strata.as_ref().unwrap();
        assert_eq!(strata.iter().map(|s| s.subjects).sum::<usize>(), 800);
        assert_eq!(strata.iter().map(|s| s.arm_one).sum::<usize>(), r.counts[0]);
        for (arm, theta) in config.arms().iter().zip(&r.theta_hat) {
            assert!(arm.bounds().contains(theta));
        }
        assert!(r
            .snapshots
            .iter()
            .all(|s| (0.0..=1.0).contains(&s.proportion)));
        assert_eq!(r.snapshots.first().unwrap().m, 10);
        assert_eq!(r.snapshots.last().unwrap().m, 800);
        assert!(r.snapshots.windows(2).all(|w| w[0].m < w[1].m));
    }

    #[test]
    fn checkpoints_grow_geometrically() {
        let config = reference::reference_trial(Policy::Zhcc, 100);
        assert_eq!(config.checkpoints(), vec![10, 15, 23, 35, 53, 80, 100]);
    }

    #[test]
    fn single_trial_lands_near_limit() {
        let config =
            reference::reference_trial(Policy::Cadbcd { gamma: 1.0 }, 2000).with_seed(2026);
        let r = run_trial(&config).unwrap();
        let summary = crate::asymptotics::summary(&config, 1.0).unwrap();
        assert!((r.proportion - summary.v).abs() < 0.1);
        assert!((r.proportion - summary.v).abs() < 5.0 * (summary.sigma_sq / 2000.0).sqrt());
    }

    #[test]
    fn ball_proportion_cases() {
        let config = reference::reference_trial(Policy::Cadbcd { gamma: 1.0 }, 600)
            .with_seed(9)
            .with_history(true);
        let r = run_trial(&config).unwrap();
        let all = ball_proportion(&r, &[1.0, 0.0], f64::INFINITY).unwrap();
        assert_eq!(all.subjects, 600);
        assert_eq!(all.ratio, Some(r.proportion));
        let empty = ball_proportion(&r, &[1.0, 5.0], 0.5).unwrap();
        assert_eq!(empty.ratio, None);
        for s in r.strata.as_ref().unwrap() {
            let ball = ball_proportion(&r, &s.x, 0.25).unwrap();
            assert_eq!(ball.subjects, s.subjects);
            assert_eq!(ball.ratio, s.proportion);
        }
        let no_history = run_trial(&config.clone().with_history(false)).unwrap();
        assert!(ball_proportion(&no_history, &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn continuous_covariates_run() {
        let cov = CovariateDistribution::new(vec![
            CovariateComponent::Intercept,
            CovariateComponent::Uniform { a: -1.0, b: 1.0 },
        ])
        .unwrap();
        let config = TrialConfig::new(
            reference::reference_arms(),
            cov,
            TargetFunction::rsihr_binary(),
            Design::new(Policy::Cadbcd { gamma: 2.0 }, 5).unwrap(),
            400,
        )
        .unwrap()
        .with_seed(4)
        .with_history(true);
        let r = run_trial(&config).unwrap();
        assert!(r.strata.is_none());
        for center in [-0.5, 0.0, 0.5] {
            let b = ball_proportion(&r, &[1.0, center], 0.2).unwrap();
            let ratio = b.ratio.unwrap();
            assert!((0.0..=1.0).contains(&ratio));
        }
    }

    #[test]
    fn refit_stride_reduces_fits() {
        let base = reference::reference_trial(Policy::Cadbcd { gamma: 1.0 }, 500).with_seed(1);
        let every = run_trial(&base).unwrap();
        let strided = run_trial(&base.clone().with_refit_stride(10).unwrap()).unwrap();
        assert!(strided.fits.attempts < every.fits.attempts);
        assert!(base.clone().with_refit_stride(0).is_err());
    }

    #[test]
    fn config_validation() {
        let arms = reference::reference_arms();
        let design = Design::new(Policy::Zhcc, 5).unwrap();
        assert!(TrialConfig::new(
            arms.clone(),
            reference::reference_covariates(),
            TargetFunction::rsihr_binary(),
            design,
            10
        )
        .is_err());
        assert!(TrialConfig::new(
            arms,
            CovariateDistribution::intercept_only(),
            TargetFunction::rsihr_binary(),
            design,
            100
        )
        .is_err());
    }

    #[test]
    fn allocation_requires_completed_burn_in() {
        let config = reference::reference_trial(Policy::Zhcc, 100);
        let mut rng = rng_from_seed(0);
        let state = TrialState::new(&config, &mut rng);
        let err = config
            .design()
            .allocation_probability(&state, &[1.0, 0.0], config.target())
            .unwrap_err();
        assert!(matches!(err, Error::DuringBurnIn { subject: 1, .. }));
    }
}
