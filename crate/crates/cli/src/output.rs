//! Report files. Every JSON document (and every CSV sidecar) carries the tool
//! version and the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use cara_core::asymptotics::{AsymptoticSummary, IntegrationErrors, MatrixRows};
use cara_core::{MonteCarloReport, TrialResult};
use serde::Serialize;

use crate::config::{serialize_extended, ConfigFile, Format, OutputSpec};
use crate::{Failure, VERSION};

const TOOL: &str = "cara-lab";

pub struct Target {
    pub path: PathBuf,
    pub format: Format,
}

impl Target {
    /// Command-line flags take precedence over the config's `output` section.
    pub fn pick(
        out: Option<PathBuf>,
        format: Option<Format>,
        spec: &OutputSpec,
    ) -> Result<Self, Failure> {
        let path = out
            .or_else(|| spec.path.as_ref().map(PathBuf::from))
            .ok_or_else(|| Failure::config("no output path: pass --out or set `output.path`"))?;
        Ok(Self {
            path,
            format: format.unwrap_or(spec.format),
        })
    }

    fn sidecar(&self) -> PathBuf {
        let mut name = self.path.clone().into_os_string();
        name.push(".meta.json");
        PathBuf::from(name)
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a ConfigFile,
    #[serde(flatten)]
    body: T,
}

fn document<'a, T: Serialize>(
    command: &'static str,
    config: &'a ConfigFile,
    body: T,
) -> Document<'a, T> {
    Document {
        tool: TOOL,
        version: VERSION,
        command,
        config,
        body,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Failure::numeric(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::config(format!("cannot write {}: {e}", path.display()));
    let mut writer = csv::Writer::from_path(path).map_err(io)?;
    writer.write_record(header).map_err(io)?;
    for row in rows {
        writer.write_record(&row).map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct TrialBody<'a> {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a TrialResult>,
}

pub fn write_trial(
    target: &Target,
    config: &ConfigFile,
    seed: u64,
    result: &TrialResult,
) -> Result<(), Failure> {
    match target.format {
        Format::Json => write_json(
            &target.path,
            &document(
                "simulate",
                config,
                TrialBody {
                    seed,
                    result: Some(result),
                },
            ),
        ),
        Format::Csv => {
            let rows = result.snapshots.iter().map(|s| {
                vec![
                    s.m.to_string(),
                    s.proportion.to_string(),
                    s.rho_hat.to_string(),
                ]
            });
            write_csv(&target.path, &["m", "proportion", "rho_hat"], rows)?;
            write_json(
                &target.sidecar(),
                &document("simulate", config, TrialBody { seed, result: None }),
            )
        }
    }
}

/// Exponent-free quantities of the asymptotic theory.
#[derive(Serialize)]
struct Scalars<'a> {
    v: f64,
    rho: [f64; 2],
    grad_rho: &'a [f64],
    information: &'a [MatrixRows; 2],
    v_matrix: &'a MatrixRows,
    sigma1_sq: f64,
    sigma2_sq: f64,
    sigma3_sq: f64,
    b: f64,
    b_matrix: [[f64; 2]; 2],
    zhcc_variance: f64,
    zhcc_matrix: [[f64; 2]; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_standard_errors: Option<IntegrationErrors>,
}

#[derive(Serialize)]
struct GammaRow {
    #[serde(serialize_with = "serialize_extended")]
    gamma: f64,
    #[serde(serialize_with = "serialize_extended")]
    lambda: f64,
    sigma_sq: f64,
    /// `sigma_sq - B`.
    gap: f64,
}

#[derive(Serialize)]
struct AsymptoticsBody<'a> {
    scalars: Scalars<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rows: Option<Vec<GammaRow>>,
}

pub fn write_asymptotics(
    target: &Target,
    config: &ConfigFile,
    summary: &AsymptoticSummary,
    grid: &[f64],
) -> Result<(), Failure> {
    let scalars = Scalars {
        v: summary.v,
        rho: summary.rho,
        grad_rho: &summary.grad_rho,
        information: &summary.information,
        v_matrix: &summary.v_matrix,
        sigma1_sq: summary.sigma1_sq,
        sigma2_sq: summary.sigma2_sq,
        sigma3_sq: summary.sigma3_sq,
        b: summary.b,
        b_matrix: summary.b_matrix,
        zhcc_variance: summary.zhcc_variance,
        zhcc_matrix: summary.zhcc_matrix,
        mc_standard_errors: summary.mc_standard_errors,
    };
    let rows: Vec<GammaRow> = grid
        .iter()
        .map(|&gamma| GammaRow {
            gamma,
            lambda: summary.lambda_at(gamma),
            sigma_sq: summary.sigma_sq_at(gamma),
            gap: summary.efficiency_gap(gamma),
        })
        .collect();
    match target.format {
        Format::Json => write_json(
            &target.path,
            &document(
                "asymptotics",
                config,
                AsymptoticsBody {
                    scalars,
                    rows: Some(rows),
                },
            ),
        ),
        Format::Csv => {
            let table = rows.iter().map(|r| {
                vec![
                    r.gamma.to_string(),
                    r.lambda.to_string(),
                    r.sigma_sq.to_string(),
                    r.gap.to_string(),
                ]
            });
            write_csv(&target.path, &["gamma", "lambda", "sigma_sq", "gap"], table)?;
            write_json(
                &target.sidecar(),
                &document(
                    "asymptotics",
                    config,
                    AsymptoticsBody {
                        scalars,
                        rows: None,
                    },
                ),
            )
        }
    }
}

#[derive(Serialize)]
struct McBody<'a> {
    all_pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a MonteCarloReport>,
}

pub fn write_mc(
    target: &Target,
    config: &ConfigFile,
    report: &MonteCarloReport,
) -> Result<(), Failure> {
    let all_pass = report.all_pass();
    match target.format {
        Format::Json => write_json(
            &target.path,
            &document(
                "mc",
                config,
                McBody {
                    all_pass,
                    report: Some(report),
                },
            ),
        ),
        Format::Csv => {
            let table = report.comparisons.iter().map(|c| {
                vec![
                    c.name.clone(),
                    c.empirical.to_string(),
                    c.theoretical.to_string(),
                    c.std_error.to_string(),
                    c.tolerance.to_string(),
                    c.pass.to_string(),
                ]
            });
            write_csv(
                &target.path,
                &[
                    "name",
                    "empirical",
                    "theoretical",
                    "std_error",
                    "tolerance",
                    "pass",
                ],
                table,
            )?;
            write_json(
                &target.sidecar(),
                &document(
                    "mc",
                    config,
                    McBody {
                        all_pass,
                        report: None,
                    },
                ),
            )
        }
    }
}
