//! Configuration-driven experiment runner.
//!
//! Exit codes: `0` all suites passed, `1` a suite failed or errored,
//! `2` the configuration could not be parsed or validated, `3` the model is
//! inadmissible for the requested simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod suites;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use thiserror::Error;
use wishart_core::model::validate_parameters;

use config::{Experiment, Overrides, Suite};
use suites::{run_suite, SuiteReport};

pub const THREADS_ENV: &str = "WISHART_LAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Inadmissible(_) => 3,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Every suite listed in the configuration.
    Run,
    Simulate,
    Transform,
    Validate,
    RiccatiCheck,
    Metric,
}

#[derive(Debug, Parser)]
#[command(name = "wishart-lab", version, about = "Wishart process experiments")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 picks automatically.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Restricts `run` to the named suites.
    #[arg(long = "suite")]
    pub suites: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub suites: Vec<SuiteReport>,
    pub seed: u64,
    pub config_hash: String,
}

fn thread_count(cli: &Cli) -> Result<usize, CliError> {
    if let Some(n) = cli.threads {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be an integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn selected_suites(cli: &Cli, exp: &Experiment) -> Result<Vec<Suite>, CliError> {
    let filter = cli.suites.iter().map(|s| Suite::parse(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(match cli.command {
        Command::Run => exp
            .suites
            .iter()
            .copied()
            .filter(|s| filter.is_empty() || filter.contains(s))
            .collect(),
        Command::Simulate => vec![Suite::Simulate],
        Command::Transform => vec![Suite::Transform],
        Command::Validate => vec![Suite::Validate],
        Command::RiccatiCheck => vec![Suite::RiccatiCheck],
        Command::Metric => vec![Suite::Metric],
    })
}

fn execute(cli: &Cli) -> Result<Summary, CliError> {
    let threads = thread_count(cli)?;
    let exp = config::load(
        &cli.config,
        &Overrides {
            seed: cli.seed,
            out: cli.out.clone(),
        },
    )?;
    let suites = selected_suites(cli, &exp)?;
    if suites.iter().any(|s| s.needs_paths()) {
        let report = validate_parameters(&exp.params, &exp.x0, false);
        if !report.admissible_for_simulation {
            return Err(CliError::Inadmissible(format!(
                "simulation needs a non-negative integer alpha and rank(x0) <= alpha (alpha = {})",
                exp.params.alpha
            )));
        }
    }
    std::fs::create_dir_all(&exp.out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut reports = Vec::with_capacity(suites.len());
    for suite in suites {
        let report = pool.install(|| run_suite(&exp, suite));
        match report {
            Ok(r) => reports.push(r),
            Err(CliError::Runtime(msg)) => reports.push(SuiteReport {
                name: suite.name(),
                pass: false,
                metrics: serde_json::json!({ "error": msg }),
            }),
            Err(e) => return Err(e),
        }
    }
    let summary = Summary {
        suites: reports,
        seed: exp.seed,
        config_hash: exp.config_hash.clone(),
    };
    wishart_core::export::write_json(&summary, &exp.out.join("summary.json")).map_err(CliError::from)?;
    Ok(summary)
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(summary) => {
            for s in &summary.suites {
                println!("{} {}", if s.pass { "PASS" } else { "FAIL" }, s.name);
            }
            if summary.suites.iter().all(|s| s.pass) {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
