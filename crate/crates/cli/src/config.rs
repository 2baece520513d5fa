//! Run configuration file: parsing, defaults and conversion into core types.

use std::fmt;
use std::path::Path;

use cara_core::designs::{Design, Policy};
use cara_core::glm::{ArmModel, Family, ParamBox, DEFAULT_BOX_HALF_WIDTH};
use cara_core::targets::{GradientMode, TargetFunction, TargetRule};
use cara_core::{CovariateComponent, CovariateDistribution, TrialConfig};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::Failure;

pub const DEFAULT_BASE_SEED: u64 = 20_260_101;
pub const DEFAULT_REPLICATIONS: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub arms: [ArmSpec; 2],
    pub covariates: Vec<CovariateComponent>,
    pub target: TargetSpec,
    pub policy: PolicySpec,
    pub trial: TrialSpec,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    BernoulliLogit,
    PoissonLog,
    NormalIdentity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub family: FamilyName,
    pub theta: Vec<f64>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoxSpec>,
    /// Dispersion; normal family only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetVariant {
    Rsihr,
    NeymanBinary,
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub variant: TargetVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default)]
    pub gradient: GradientMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    CompleteRandomization,
    Zhcc,
    Cadbcd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub variant: PolicyVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Gamma>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSpec {
    pub n: usize,
    #[serde(default = "default_stride")]
    pub refit_stride: usize,
    #[serde(default)]
    pub record_history: bool,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}
fn default_base_seed() -> u64 {
    DEFAULT_BASE_SEED
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            replications: DEFAULT_REPLICATIONS,
            base_seed: DEFAULT_BASE_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Exponent that may be infinite; written as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma(pub f64);

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for Gamma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let value = match s.trim() {
            "inf" | "infinity" | "Inf" | "Infinity" => f64::INFINITY,
            other => other
                .parse::<f64>()
                .map_err(|e| format!("invalid gamma `{other}`: {e}"))?,
        };
        if value.is_nan() || value < 0.0 {
            return Err(format!("gamma must be non-negative, got {s}"));
        }
        Ok(Gamma(value))
    }
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serialize_extended(&self.0, serializer)
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct GammaVisitor;

        impl Visitor<'_> for GammaVisitor {
            type Value = Gamma;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Gamma, E> {
                v.to_string().parse().map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Gamma, E> {
                Ok(Gamma(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Gamma, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Gamma, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(GammaVisitor)
    }
}

/// Finite values as JSON numbers, infinities as `"inf"` / `"-inf"`.
pub fn serialize_extended<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if value.is_finite() {
        serializer.serialize_f64(*value)
    } else if value.is_nan() {
        serializer.serialize_str("nan")
    } else if *value > 0.0 {
        serializer.serialize_str("inf")
    } else {
        serializer.serialize_str("-inf")
    }
}

/// A configuration with every default filled in, plus the core objects built from it.
#[derive(Debug)]
pub struct Resolved {
    pub file: ConfigFile,
    pub trial: TrialConfig,
}

pub fn load(path: &Path) -> Result<ConfigFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ConfigFile, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Failure::config(format!("config error: {inner}"))
        } else {
            Failure::config(format!("config error at `{path}`: {inner}"))
        }
    })
}

impl ConfigFile {
    pub fn resolve(mut self) -> Result<Resolved, Failure> {
        let covariates =
            CovariateDistribution::new(self.covariates.clone()).map_err(|e| at("covariates", e))?;
        let d = covariates.dim();

        let mut models = Vec::with_capacity(2);
        for (k, arm) in self.arms.iter_mut().enumerate() {
            let field = |name: &str| format!("arms[{k}].{name}");
            let family = match arm.family {
                FamilyName::BernoulliLogit | FamilyName::PoissonLog if arm.phi.is_some() => {
                    return Err(Failure::config(format!(
                        "config error at `{}`: dispersion is only configurable for the normal family",
                        field("phi")
                    )))
                }
                FamilyName::BernoulliLogit => Family::BernoulliLogit,
                FamilyName::PoissonLog => Family::PoissonLog,
                FamilyName::NormalIdentity => {
                    let phi = *arm.phi.get_or_insert(1.0);
                    Family::normal(phi).map_err(|e| at(&field("phi"), e))?
                }
            };
            if arm.theta.len() != d {
                return Err(Failure::config(format!(
                    "config error at `{}`: expected {d} coefficients to match the covariate dimension, got {}",
                    field("theta"),
                    arm.theta.len()
                )));
            }
            let bounds = arm.bounds.get_or_insert_with(|| BoxSpec {
                lower: vec![-DEFAULT_BOX_HALF_WIDTH; d],
                upper: vec![DEFAULT_BOX_HALF_WIDTH; d],
            });
            let bounds = ParamBox::new(bounds.lower.clone(), bounds.upper.clone())
                .map_err(|e| at(&field("box"), e))?;
            let model = ArmModel::new(family, arm.theta.clone(), bounds)
                .map_err(|e| at(&field("theta"), e))?;
            models.push(model);
        }
        let arms: [ArmModel; 2] = models.try_into().expect("two arms");
        let families = [*arms[0].family(), *arms[1].family()];

        let rule = match self.target.variant {
            TargetVariant::Fixed => {
                let c = self.target.c.ok_or_else(|| {
                    Failure::config("config error at `target`: missing field `c`")
                })?;
                TargetRule::Fixed(c)
            }
            _ if self.target.c.is_some() => {
                return Err(Failure::config(
                    "config error at `target.c`: only the fixed target takes a constant",
                ))
            }
            TargetVariant::Rsihr => TargetRule::Rsihr,
            TargetVariant::NeymanBinary => TargetRule::NeymanBinary,
        };
        let target = TargetFunction::new(rule, families, self.target.gradient)
            .map_err(|e| at("target", e))?;

        let policy = match self.policy.variant {
            PolicyVariant::CompleteRandomization => {
                let p = self.policy.p.ok_or_else(|| {
                    Failure::config("config error at `policy`: missing field `p`")
                })?;
                Policy::CompleteRandomization { p }
            }
            PolicyVariant::Zhcc => Policy::Zhcc,
            PolicyVariant::Cadbcd => {
                let gamma = self.policy.gamma.ok_or_else(|| {
                    Failure::config("config error at `policy`: missing field `gamma`")
                })?;
                Policy::Cadbcd { gamma: gamma.0 }
            }
        };
        if self.policy.p.is_some() && self.policy.variant != PolicyVariant::CompleteRandomization {
            return Err(Failure::config(
                "config error at `policy.p`: only complete randomization takes `p`",
            ));
        }
        if self.policy.gamma.is_some() && self.policy.variant != PolicyVariant::Cadbcd {
            return Err(Failure::config(
                "config error at `policy.gamma`: only cadbcd takes `gamma`",
            ));
        }
        let m0 = *self.policy.m0.get_or_insert(Design::default_burn_in(d));
        let design = Design::new(policy, m0).map_err(|e| at("policy", e))?;

        let trial = TrialConfig::new(arms, covariates, target, design, self.trial.n)
            .map_err(|e| at("trial", e))?
            .with_refit_stride(self.trial.refit_stride)
            .map_err(|e| at("trial.refit_stride", e))?
            .with_history(self.trial.record_history);

        Ok(Resolved { file: self, trial })
    }
}

fn at(field: &str, err: cara_core::Error) -> Failure {
    if err.is_numeric() {
        Failure::numeric(err.to_string())
    } else {
        Failure::config(format!("config error at `{field}`: {err}"))
    }
}
