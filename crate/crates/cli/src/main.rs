//! `cara-lab`: simulate, analyse and validate covariate-adjusted response-adaptive designs.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use cara_core::asymptotics;
use cara_core::montecarlo::{self, McConfig};
use cara_core::trial::run_trial;
use cara_core::validation::{self, ValidationOptions};
use clap::{Parser, Subcommand};

use config::{Format, Gamma};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Error carrying the process exit code: 2 for configuration, 3 for numeric failures.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<cara_core::Error> for Failure {
    fn from(err: cara_core::Error) -> Self {
        if err.is_numeric() {
            Failure::numeric(err.to_string())
        } else {
            Failure::config(err.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "cara-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; defaults to `output.path` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `csv` writes the snapshot table plus a `.meta.json` sidecar.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Tabulate asymptotic variances over a grid of exponents.
    Asymptotics {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated exponents; `inf` is allowed.
        #[arg(long, value_delimiter = ',', required = true)]
        gamma_grid: Vec<Gamma>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Replicate the configured trial and compare against the asymptotic theory.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Replications; defaults to `mc.replications` from the config.
        #[arg(long)]
        reps: Option<usize>,
        /// Base seed; defaults to `mc.base_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads. Affects wall time only.
        #[arg(long, env = "CARA_LAB_WORKERS")]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Run the numerical self-checks.
    Validate {
        /// Relative perturbation of the exponent inside g (negative control).
        #[arg(long, hide = true, default_value_t = 0.0)]
        g_exponent_perturbation: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Simulate {
            config,
            seed,
            out,
            format,
        } => {
            let resolved = config::load(&config)?.resolve()?;
            let target = output::Target::pick(out, format, &resolved.file.output)?;
            let trial = resolved.trial.clone().with_seed(seed);
            let result = run_trial(&trial)?;
            output::write_trial(&target, &resolved.file, seed, &result)?;
            println!(
                "simulated n = {}: N1/n = {:.6}, rho_hat = {:.6} -> {}",
                result.n,
                result.proportion,
                result.rho_hat,
                target.path.display()
            );
        }
        Command::Asymptotics {
            config,
            gamma_grid,
            out,
            format,
        } => {
            let resolved = config::load(&config)?.resolve()?;
            let target = output::Target::pick(out, format, &resolved.file.output)?;
            let base = asymptotics::summary(&resolved.trial, 0.0)?;
            let grid: Vec<f64> = gamma_grid.iter().map(|g| g.0).collect();
            output::write_asymptotics(&target, &resolved.file, &base, &grid)?;
            println!(
                "v = {:.10}, B = {:.10} -> {}",
                base.v,
                base.b,
                target.path.display()
            );
        }
        Command::Mc {
            config,
            reps,
            seed,
            workers,
            out,
            format,
        } => {
            let mut file = config::load(&config)?;
            if let Some(reps) = reps {
                file.mc.replications = reps;
            }
            if let Some(seed) = seed {
                file.mc.base_seed = seed;
            }
            if workers == Some(0) {
                return Err(Failure::config("--workers must be at least 1"));
            }
            let resolved = file.resolve()?;
            let target = output::Target::pick(out, format, &resolved.file.output)?;
            let mc = McConfig::new(
                resolved.trial.clone(),
                resolved.file.mc.replications,
                resolved.file.mc.base_seed,
            )?;
            let report = match workers {
                Some(w) => montecarlo::run_with_workers(&mc, w)?,
                None => montecarlo::run(&mc)?,
            };
            output::write_mc(&target, &resolved.file, &report)?;
            let failed: Vec<&str> = report
                .comparisons
                .iter()
                .filter(|c| !c.pass)
                .map(|c| c.name.as_str())
                .collect();
            if failed.is_empty() {
                println!(
                    "{} replications, all {} comparisons pass -> {}",
                    report.replications,
                    report.comparisons.len(),
                    target.path.display()
                );
            } else {
                println!(
                    "{} replications, failing comparisons: {} -> {}",
                    report.replications,
                    failed.join(", "),
                    target.path.display()
                );
            }
        }
        Command::Validate {
            g_exponent_perturbation,
        } => {
            let checks = validation::run_all(ValidationOptions {
                g_exponent_perturbation,
            });
            let mut all = true;
            for check in &checks {
                all &= check.pass;
                println!(
                    "[{}] {:<30} measured {:.6e} {} {:.6e}",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.name,
                    check.measured,
                    if check.lower_bound { ">=" } else { "<=" },
                    check.threshold
                );
            }
            let passed = checks.iter().filter(|c| c.pass).count();
            println!("{passed}/{} checks passed", checks.len());
            if !all {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
