//! Small numerical helpers: compensated sums and sample moments.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample moments of a univariate sample.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of `variance`, from the fourth central moment.
    pub variance_se: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let nf = n as f64;
        let m = mean(values);
        let central = |p: i32| compensated_sum(values.iter().map(|v| (v - m).powi(p))) / nf;
        let m2 = central(2);
        let m3 = central(3);
        let m4 = central(4);
        let variance = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
        let (skewness, excess_kurtosis) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        Self {
            n,
            mean: m,
            variance,
            variance_se: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
            skewness,
            excess_kurtosis,
        }
    }

    /// Standard error of the mean.
    pub fn mean_se(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }
}
