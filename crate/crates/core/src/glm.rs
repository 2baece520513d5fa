//! Exponential-family response models with canonical links.
//!
//! Each arm's response given covariate `x` has density
//! `exp{(y*mu - a(mu))/phi + b(y, phi)}` with natural parameter `mu = x . theta`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default half-width of the parameter box when none is configured.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 10.0;
/// IRLS stops once every coordinate moves less than this.
pub const IRLS_TOLERANCE: f64 = 1e-10;
pub const IRLS_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    BernoulliLogit,
    PoissonLog,
    NormalIdentity { phi: f64 },
}

impl Family {
    pub fn normal(phi: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::invalid("phi", "scale must be finite and positive"));
        }
        Ok(Family::NormalIdentity { phi })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::BernoulliLogit => "bernoulli_logit",
            Family::PoissonLog => "poisson_log",
            Family::NormalIdentity { .. } => "normal_identity",
        }
    }

    /// Scale parameter (1 for the Bernoulli and Poisson families).
    pub fn phi(&self) -> f64 {
        match *self {
            Family::NormalIdentity { phi } => phi,
            _ => 1.0,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Family::BernoulliLogit)
    }

    /// Cumulant function `a(mu)`.
    pub fn cumulant(&self, mu: f64) -> f64 {
        match self {
            Family::BernoulliLogit => mu.max(0.0) + (-mu.abs()).exp().ln_1p(),
            Family::PoissonLog => mu.exp(),
            Family::NormalIdentity { .. } => 0.5 * mu * mu,
        }
    }

    /// `a'(mu)`, the conditional mean.
    pub fn mean(&self, mu: f64) -> f64 {
        match self {
            Family::BernoulliLogit => logistic(mu),
            Family::PoissonLog => mu.exp(),
            Family::NormalIdentity { .. } => mu,
        }
    }

    /// `a''(mu)`, the variance function at unit scale.
    pub fn variance(&self, mu: f64) -> f64 {
        match self {
            Family::BernoulliLogit => {
                let p = logistic(mu);
                p * (1.0 - p)
            }
            Family::PoissonLog => mu.exp(),
            Family::NormalIdentity { .. } => 1.0,
        }
    }

    /// Normalising term `b(y, phi)`.
    fn base_measure(&self, y: f64) -> f64 {
        match *self {
            Family::BernoulliLogit => 0.0,
            Family::PoissonLog => -ln_factorial(y as u64),
            Family::NormalIdentity { phi } => {
                -y * y / (2.0 * phi) - 0.5 * (2.0 * std::f64::consts::PI * phi).ln()
            }
        }
    }

    pub fn check_support(&self, y: f64) -> Result<()> {
        let ok = match self {
            Family::BernoulliLogit => y == 0.0 || y == 1.0,
            Family::PoissonLog => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
            Family::NormalIdentity { .. } => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::OutsideSupport {
                y,
                family: self.name(),
            })
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(mu: f64) -> f64 {
    if mu >= 0.0 {
        1.0 / (1.0 + (-mu).exp())
    } else {
        let e = mu.exp();
        e / (1.0 + e)
    }
}

fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Closed axis-aligned parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::invalid("box", "dimension must be positive"));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(Error::invalid(
                "box",
                "each lower bound must be finite and below its upper bound",
            ));
        }
        Ok(Self { lower, upper })
    }

    /// `[-h, h]^d`.
    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    pub fn clip(&self, theta: &mut [f64]) {
        for (t, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.clamp(*l, *u);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Box widened by its own width on every side; IRLS iterates leaving it are treated as divergent.
    fn guard_contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (l, u))| {
                let w = u - l;
                t.is_finite() && *t >= l - w && *t <= u + w
            })
    }
}

/// One arm's response law: family, coefficients and the parameter box they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    family: Family,
    theta: Vec<f64>,
    bounds: ParamBox,
}

impl ArmModel {
    pub fn new(family: Family, theta: Vec<f64>, bounds: ParamBox) -> Result<Self> {
        check_dim(bounds.dim(), theta.len())?;
        if !bounds.contains(&theta) {
            return Err(Error::invalid(
                "theta",
                "coefficients lie outside the parameter box",
            ));
        }
        Ok(Self {
            family,
            theta,
            bounds,
        })
    }

    /// Model with the default box `[-10, 10]^d`.
    pub fn with_default_box(family: Family, theta: Vec<f64>) -> Result<Self> {
        let bounds = ParamBox::symmetric(theta.len(), DEFAULT_BOX_HALF_WIDTH)?;
        Self::new(family, theta, bounds)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Same family and box, different coefficients (not checked against the box).
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), theta.len())?;
        Ok(Self {
            family: self.family,
            theta,
            bounds: self.bounds.clone(),
        })
    }

    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(dot(x, &self.theta))
    }

    pub fn mean_response(&self, x: &[f64]) -> Result<f64> {
        Ok(self.family.mean(self.linear_predictor(x)?))
    }

    pub fn sample_response<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let mu = self.linear_predictor(x)?;
        let y = match self.family {
            Family::BernoulliLogit => {
                if rng.random_bool(logistic(mu)) {
                    1.0
                } else {
                    0.0
                }
            }
            Family::PoissonLog => {
                let lambda = mu.exp();
                Poisson::new(lambda)
                    .map_err(|e| Error::invalid("poisson mean", e.to_string()))?
                    .sample(rng)
            }
            Family::NormalIdentity { phi } => Normal::new(mu, phi.sqrt())
                .map_err(|e| Error::invalid("normal scale", e.to_string()))?
                .sample(rng),
        };
        Ok(y)
    }

    pub fn log_density(&self, x: &[f64], y: f64) -> Result<f64> {
        self.family.check_support(y)?;
        let mu = self.linear_predictor(x)?;
        let f = &self.family;
        Ok((y * mu - f.cumulant(mu)) / f.phi() + f.base_measure(y))
    }

    /// `a''(x . theta) / phi * x^T x`.
    pub fn conditional_fisher_info(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mu = self.linear_predictor(x)?;
        let w = self.family.variance(mu) / self.family.phi();
        let xv = DVector::from_column_slice(x);
        Ok(&xv * xv.transpose() * w)
    }

    /// Gradient of `log_density` in theta: `(y - a'(mu)) / phi * x`.
    pub fn score(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        self.family.check_support(y)?;
        let mu = self.linear_predictor(x)?;
        let r = (y - self.family.mean(mu)) / self.family.phi();
        Ok(x.iter().map(|xi| r * xi).collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
struct CovariateGroup {
    x: Vec<f64>,
    count: f64,
    response_sum: f64,
}

/// Observations `(x_j, y_j)` of the subjects assigned to one arm.
///
/// Rows sharing an identical covariate vector are also pooled into groups of
/// `(count, sum of responses)`, which is all a canonical-link likelihood needs.
#[derive(Debug, Clone, Default)]
pub struct ArmData {
    dim: usize,
    rows: Vec<(Vec<f64>, f64)>,
    groups: Vec<CovariateGroup>,
    index: HashMap<Vec<u64>, usize>,
}

impl ArmData {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, family: &Family, x: &[f64], y: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        family.check_support(y)?;
        self.rows.push((x.to_vec(), y));
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        match self.index.get(&key) {
            Some(&g) => {
                self.groups[g].count += 1.0;
                self.groups[g].response_sum += y;
            }
            None => {
                self.index.insert(key, self.groups.len());
                self.groups.push(CovariateGroup {
                    x: x.to_vec(),
                    count: 1.0,
                    response_sum: y,
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(Vec<f64>, f64)] {
        &self.rows
    }

    /// Number of distinct covariate vectors observed.
    pub fn distinct_covariates(&self) -> usize {
        self.groups.len()
    }

    /// Log-likelihood of the sample at `theta`, including normalising terms.
    pub fn log_likelihood(&self, family: &Family, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        let phi = family.phi();
        Ok(self
            .rows
            .iter()
            .map(|(x, y)| {
                let mu = dot(x, theta);
                (y * mu - family.cumulant(mu)) / phi + family.base_measure(*y)
            })
            .sum())
    }
}

/// Outcome of [`fit_mle`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleFit {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Maximum likelihood by IRLS (Newton with expected information, exact for canonical links).
///
/// Starts from `warm_start`. On success the fixed point is clipped to `bounds`.
/// Falls back to `warm_start` with `converged = false` when there are fewer rows than
/// coefficients, the weighted design is singular, or the iteration diverges or fails
/// to settle within [`IRLS_MAX_ITER`] steps (e.g. complete separation).
pub fn fit_mle(family: &Family, bounds: &ParamBox, data: &ArmData, warm_start: &[f64]) -> MleFit {
    let d = bounds.dim();
    let fallback = |iterations| MleFit {
        theta: warm_start.to_vec(),
        converged: false,
        iterations,
    };
    if warm_start.len() != d || data.dim() != d || data.len() < d {
        return fallback(0);
    }
    let phi = family.phi();
    let mut theta = DVector::from_column_slice(warm_start);
    for iter in 1..=IRLS_MAX_ITER {
        let mut grad = DVector::<f64>::zeros(d);
        let mut info = DMatrix::<f64>::zeros(d, d);
        for g in &data.groups {
            let x = DVector::from_column_slice(&g.x);
            let mu = x.dot(&theta);
            let resid = (g.response_sum - g.count * family.mean(mu)) / phi;
            let w = g.count * family.variance(mu) / phi;
            grad.axpy(resid, &x, 1.0);
            info.ger(w, &x, &x, 1.0);
        }
        let Some(chol) = info.clone().cholesky() else {
            return fallback(iter);
        };
        let l = chol.l_dirty();
        let diag = (0..d).map(|i| l[(i, i)] * l[(i, i)]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if !(lo > 1e-12 * hi) {
            return fallback(iter);
        }
        let step = chol.solve(&grad);
        theta += &step;
        if !bounds.guard_contains(theta.as_slice()) {
            return fallback(iter);
        }
        if step.amax() < IRLS_TOLERANCE {
            let mut out = theta.as_slice().to_vec();
            bounds.clip(&mut out);
            return MleFit {
                theta: out,
                converged: true,
                iterations: iter,
            };
        }
    }
    fallback(IRLS_MAX_ITER)
}
