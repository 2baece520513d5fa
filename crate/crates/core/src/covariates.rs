//! Covariate laws: independent components concatenated into one vector.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_from_seed;
use crate::stats::CompensatedSum;

/// Default sample size for Monte Carlo expectations over continuous laws.
pub const DEFAULT_MC_SAMPLES: usize = 200_000;
/// Default seed for Monte Carlo expectations.
pub const DEFAULT_MC_SEED: u64 = 0x00C0_FFEE_5EED;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateComponent {
    /// Constant 1.
    Intercept,
    Bernoulli {
        p: f64,
    },
    /// Level probabilities; dummy coded with the first level as reference,
    /// so it contributes `probs.len() - 1` coordinates.
    Categorical {
        probs: Vec<f64>,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
}

impl CovariateComponent {
    pub fn dim(&self) -> usize {
        match self {
            CovariateComponent::Categorical { probs } => probs.len().saturating_sub(1),
            _ => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(
            self,
            CovariateComponent::Uniform { .. } | CovariateComponent::Gaussian { .. }
        )
    }

    fn validate(&self, position: usize) -> Result<()> {
        let name = |field: &str| format!("covariates[{position}].{field}");
        match self {
            CovariateComponent::Intercept => Ok(()),
            CovariateComponent::Bernoulli { p } => {
                if *p > 0.0 && *p < 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(name("p"), "must lie in (0, 1)"))
                }
            }
            CovariateComponent::Categorical { probs } => {
                if probs.len() < 2 {
                    return Err(Error::invalid(name("probs"), "needs at least two levels"));
                }
                if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                    return Err(Error::invalid(
                        name("probs"),
                        "each probability must lie in (0, 1)",
                    ));
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::invalid(name("probs"), "probabilities must sum to 1"));
                }
                Ok(())
            }
            CovariateComponent::Uniform { a, b } => {
                if a.is_finite() && b.is_finite() && b > a {
                    Ok(())
                } else {
                    Err(Error::invalid(
                        name("b"),
                        "uniform bounds must be finite with b > a",
                    ))
                }
            }
            CovariateComponent::Gaussian { mean, sd } => {
                if mean.is_finite() && sd.is_finite() && *sd > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(
                        name("sd"),
                        "gaussian needs finite mean and sd > 0",
                    ))
                }
            }
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            CovariateComponent::Intercept => out.push(1.0),
            CovariateComponent::Bernoulli { p } => {
                out.push(if rng.random_bool(*p) { 1.0 } else { 0.0 })
            }
            CovariateComponent::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut level = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        level = i;
                        break;
                    }
                }
                out.extend((1..probs.len()).map(|j| if j == level { 1.0 } else { 0.0 }));
            }
            CovariateComponent::Uniform { a, b } => out.push(rng.random_range(*a..*b)),
            CovariateComponent::Gaussian { mean, sd } => {
                out.push(Normal::new(*mean, *sd).expect("validated").sample(rng))
            }
        }
    }

    /// Support points with probabilities, for discrete components.
    fn atoms(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        match self {
            CovariateComponent::Intercept => Some(vec![(vec![1.0], 1.0)]),
            CovariateComponent::Bernoulli { p } => {
                Some(vec![(vec![0.0], 1.0 - p), (vec![1.0], *p)])
            }
            CovariateComponent::Categorical { probs } => Some(
                probs
                    .iter()
                    .enumerate()
                    .map(|(level, p)| {
                        let x = (1..probs.len())
                            .map(|j| if j == level { 1.0 } else { 0.0 })
                            .collect();
                        (x, *p)
                    })
                    .collect(),
            ),
            _ => None,
        }
    }
}

/// Product law of independent covariate components; subjects are i.i.d. draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateDistribution {
    components: Vec<CovariateComponent>,
    dim: usize,
}

impl CovariateDistribution {
    pub fn new(components: Vec<CovariateComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid(
                "covariates",
                "at least one component is required",
            ));
        }
        for (i, c) in components.iter().enumerate() {
            c.validate(i)?;
        }
        let dim = components.iter().map(CovariateComponent::dim).sum();
        Ok(Self { components, dim })
    }

    pub fn intercept_only() -> Self {
        Self::new(vec![CovariateComponent::Intercept]).expect("valid")
    }

    pub fn components(&self) -> &[CovariateComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `true` at coordinates produced by an intercept component.
    pub fn intercept_mask(&self) -> Vec<bool> {
        self.components
            .iter()
            .flat_map(|c| std::iter::repeat_n(matches!(c, CovariateComponent::Intercept), c.dim()))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        for c in &self.components {
            c.sample_into(rng, &mut out);
        }
        out
    }

    pub fn is_discrete(&self) -> bool {
        self.components.iter().all(CovariateComponent::is_discrete)
    }

    /// All support points with their probabilities (cartesian product of component atoms).
    pub fn enumerate_atoms(&self) -> Result<Vec<(Vec<f64>, f64)>> {
        let mut atoms: Vec<(Vec<f64>, f64)> = vec![(Vec::with_capacity(self.dim), 1.0)];
        for c in &self.components {
            let parts = c.atoms().ok_or(Error::NotDiscrete)?;
            atoms = atoms
                .iter()
                .flat_map(|(x, p)| {
                    parts.iter().map(move |(xc, pc)| {
                        let mut v = x.clone();
                        v.extend_from_slice(xc);
                        (v, p * pc)
                    })
                })
                .collect();
        }
        Ok(atoms)
    }

    /// Weighted point set used for expectations (exact atoms or a fixed Monte Carlo sample).
    pub fn integration_rule(&self, mode: ExpectMode) -> IntegrationRule {
        match mode {
            ExpectMode::Auto if self.is_discrete() => {
                let atoms = self.enumerate_atoms().expect("discrete");
                let (points, weights) = atoms.into_iter().unzip();
                IntegrationRule {
                    points,
                    weights,
                    monte_carlo: false,
                }
            }
            ExpectMode::Auto => self.monte_carlo_rule(DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED),
            ExpectMode::MonteCarlo { samples, seed } => self.monte_carlo_rule(samples, seed),
        }
    }

    fn monte_carlo_rule(&self, samples: usize, seed: u64) -> IntegrationRule {
        let samples = samples.max(2);
        let mut rng = rng_from_seed(seed);
        let points = (0..samples).map(|_| self.sample(&mut rng)).collect();
        IntegrationRule {
            points,
            weights: vec![1.0 / samples as f64; samples],
            monte_carlo: true,
        }
    }

    /// `E[f(xi)]` with its Monte Carlo standard error (zero when exact).
    pub fn expect(&self, f: impl Fn(&[f64]) -> f64, mode: ExpectMode) -> Estimate {
        self.integration_rule(mode).expect(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ExpectMode {
    /// Exact atom enumeration for discrete laws, otherwise Monte Carlo with the defaults.
    #[default]
    Auto,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Weighted points approximating (or exactly representing) the covariate law.
#[derive(Debug, Clone)]
pub struct IntegrationRule {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    monte_carlo: bool,
}

impl IntegrationRule {
    pub fn is_monte_carlo(&self) -> bool {
        self.monte_carlo
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }

    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> Estimate {
        let values: Vec<f64> = self.points.iter().map(|x| f(x)).collect();
        let mut acc = CompensatedSum::default();
        for (v, w) in values.iter().zip(&self.weights) {
            acc.add(w * v);
        }
        let value = acc.value();
        let std_error = if self.monte_carlo {
            let n = values.len() as f64;
            let mut ss = CompensatedSum::default();
            for v in &values {
                ss.add((v - value).powi(2));
            }
            (ss.value() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Estimate { value, std_error }
    }

    /// Entrywise expectation of a matrix-valued function of fixed shape.
    pub fn expect_matrix(&self, f: impl Fn(&[f64]) -> DMatrix<f64>) -> DMatrix<f64> {
        let mut iter = self.points();
        let (x0, w0) = iter.next().expect("non-empty rule");
        let mut acc = f(x0) * w0;
        for (x, w) in iter {
            acc += f(x) * w;
        }
        acc
    }

    /// Entrywise expectation of a vector-valued function of fixed length.
    pub fn expect_vec(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut acc: Option<Vec<CompensatedSum>> = None;
        for (x, w) in self.points() {
            let v = f(x);
            let acc = acc.get_or_insert_with(|| vec![CompensatedSum::default(); v.len()]);
            for (a, vi) in acc.iter_mut().zip(v) {
                a.add(w * vi);
            }
        }
        acc.unwrap_or_default()
            .iter()
            .map(CompensatedSum::value)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use proptest::prelude::*;

    fn intercept_plus(c: CovariateComponent) -> CovariateDistribution {
        CovariateDistribution::new(vec![CovariateComponent::Intercept, c]).unwrap()
    }

    #[test]
    fn sampling_examples() {
        let mut rng = rng_from_seed(1);
        assert_eq!(
            CovariateDistribution::intercept_only().sample(&mut rng),
            vec![1.0]
        );

        let n = 100_000;
        let bern = intercept_plus(CovariateComponent::Bernoulli { p: 0.5 });
        let m = (0..n).map(|_| bern.sample(&mut rng)[1]).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 0.005);

        let unif = intercept_plus(CovariateComponent::Uniform { a: 0.0, b: 1.0 });
        let xs: Vec<f64> = (0..n).map(|_| unif.sample(&mut rng)[1]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - 1.0 / 12.0).abs() < 0.003);
    }

    #[test]
    fn categorical_is_dummy_coded() {
        let d = intercept_plus(CovariateComponent::Categorical {
            probs: vec![0.2, 0.3, 0.5],
        });
        assert_eq!(d.dim(), 3);
        assert_eq!(d.intercept_mask(), vec![true, false, false]);
        let mut rng = rng_from_seed(3);
        let mut counts = [0usize; 3];
        for _ in 0..60_000 {
            let x = d.sample(&mut rng);
            let level = if x[1] == 1.0 {
                1
            } else if x[2] == 1.0 {
                2
            } else {
                0
            };
            counts[level] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            assert!((*c as f64 / 60_000.0 - p).abs() < 0.01);
        }
    }

    #[test]
    fn atom_enumeration() {
        let d = intercept_plus(CovariateComponent::Bernoulli { p: 0.3 });
        assert!(d.is_discrete());
        let atoms = d.enumerate_atoms().unwrap();
        assert_eq!(atoms.len(), 2);
        assert_eq!(atoms[0].0, vec![1.0, 0.0]);
        assert!((atoms[0].1 - 0.7).abs() < 1e-15);
        assert_eq!(atoms[1], (vec![1.0, 1.0], 0.3));

        let cat = intercept_plus(CovariateComponent::Categorical {
            probs: vec![0.2, 0.3, 0.5],
        });
        let atoms = cat.enumerate_atoms().unwrap();
        let probs: Vec<f64> = atoms.iter().map(|a| a.1).collect();
        assert_eq!(probs, vec![0.2, 0.3, 0.5]);
        assert_eq!(atoms[0].0, vec![1.0, 0.0, 0.0]);

        let gauss = intercept_plus(CovariateComponent::Gaussian { mean: 0.0, sd: 1.0 });
        assert!(!gauss.is_discrete());
        assert_eq!(gauss.enumerate_atoms(), Err(Error::NotDiscrete));
    }

    #[test]
    fn invalid_components_are_rejected() {
        let bad = [
            CovariateComponent::Bernoulli { p: 1.0 },
            CovariateComponent::Categorical {
                probs: vec![0.5, 0.6],
            },
            CovariateComponent::Uniform { a: 1.0, b: 1.0 },
            CovariateComponent::Gaussian { mean: 0.0, sd: 0.0 },
        ];
        for c in bad {
            assert!(CovariateDistribution::new(vec![c]).is_err());
        }
        assert!(CovariateDistribution::new(vec![]).is_err());
    }

    #[test]
    fn expectation_examples() {
        let d = intercept_plus(CovariateComponent::Bernoulli { p: 0.3 });
        assert_eq!(d.expect(|_| 1.0, ExpectMode::Auto).value, 1.0);
        let e = d.expect(|x| x[1], ExpectMode::Auto);
        assert_eq!((e.value, e.std_error), (0.3, 0.0));

        let u = intercept_plus(CovariateComponent::Uniform { a: 0.0, b: 1.0 });
        let c = u.expect(|_| 1.0, ExpectMode::Auto);
        assert!((c.value - 1.0).abs() < 1e-12 && c.std_error < 1e-12);
        let e = u.expect(|x| x[1] * x[1], ExpectMode::Auto);
        // Analytic integral of x^2 over [0, 1].
        assert!((e.value - 1.0 / 3.0).abs() < 3.0 * e.std_error, "{e:?}");
        assert!(e.std_error > 0.0);
    }

    #[test]
    fn expectation_is_linear_on_shared_sample() {
        let u = intercept_plus(CovariateComponent::Gaussian { mean: 0.5, sd: 2.0 });
        let rule = u.integration_rule(ExpectMode::MonteCarlo {
            samples: 5_000,
            seed: 9,
        });
        let f = |x: &[f64]| x[1].sin();
        let g = |x: &[f64]| x[1] * x[1];
        let lhs = rule.expect(|x| 2.0 * f(x) - 3.0 * g(x)).value;
        let rhs = 2.0 * rule.expect(f).value - 3.0 * rule.expect(g).value;
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
    }

    proptest! {
        #[test]
        fn atoms_sum_to_one(p in 0.01f64..0.99, q in 0.05f64..0.45) {
            let d = CovariateDistribution::new(vec![
                CovariateComponent::Intercept,
                CovariateComponent::Bernoulli { p },
                CovariateComponent::Categorical { probs: vec![q, 0.5 - q, 0.5] },
            ]).unwrap();
            let total: f64 = d.enumerate_atoms().unwrap().iter().map(|a| a.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn discrete_expectation_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, p in 0.05f64..0.95) {
            let d = intercept_plus(CovariateComponent::Bernoulli { p });
            let f = |x: &[f64]| (x[1] + 0.3).exp();
            let g = |x: &[f64]| x[0] - 2.0 * x[1];
            let lhs = d.expect(|x| a * f(x) + b * g(x), ExpectMode::Auto).value;
            let rhs = a * d.expect(f, ExpectMode::Auto).value + b * d.expect(g, ExpectMode::Auto).value;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
