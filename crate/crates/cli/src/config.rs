//! Experiment configuration: the JSON wire format and its resolved form.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use wishart_core::model::{random_low_rank, InitialState, ModelConfig, ModelParams, OperatorSpec};
use wishart_core::operator::{PsdOperator, SelfAdjointOperator};
use wishart_core::sim::{Scheme, SimPlan};
use wishart_core::transform::{Regime, TestFunctional};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub initial: InitialSpec,
    pub sim: SimSpec,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default)]
    pub suites: Vec<String>,
    #[serde(default)]
    pub metric: MetricSpec,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("wishart-out")
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Random(RandomInitial),
    Operator(OperatorSpec),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RandomInitial {
    RandomLowRank {
        rank: usize,
        #[serde(default = "one")]
        scale: f64,
        /// Defaults to the simulation seed.
        seed: Option<u64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub scheme: Scheme,
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub euler_max_step: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub id: String,
    pub regime: Regime,
    pub u: Option<OperatorSpec>,
    pub v: Option<OperatorSpec>,
    pub times: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    /// Family depth; full separation when absent.
    pub depth: Option<usize>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_scales")]
    pub decay_scales: Vec<f64>,
    #[serde(default = "default_w")]
    pub decay_w: f64,
    #[serde(default = "one")]
    pub decay_z: f64,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            depth: None,
            points: default_points(),
            decay_scales: default_scales(),
            decay_w: default_w(),
            decay_z: 1.0,
        }
    }
}

fn default_points() -> usize {
    100
}

fn default_scales() -> Vec<f64> {
    vec![1.0, 10.0, 100.0]
}

fn default_w() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Simulate,
    Transform,
    Validate,
    RiccatiCheck,
    Metric,
    CrossValidate,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Simulate,
        Suite::Transform,
        Suite::Validate,
        Suite::RiccatiCheck,
        Suite::Metric,
        Suite::CrossValidate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Simulate => "simulate",
            Suite::Transform => "transform",
            Suite::Validate => "validate",
            Suite::RiccatiCheck => "riccati-check",
            Suite::Metric => "metric",
            Suite::CrossValidate => "cross-validate",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown suite {s:?}")))
    }

    pub fn needs_paths(self) -> bool {
        matches!(self, Suite::Simulate | Suite::Validate | Suite::CrossValidate)
    }
}

pub struct Probe {
    pub id: String,
    pub functional: TestFunctional,
    pub times: Vec<f64>,
}

/// A validated experiment ready to execute.
pub struct Experiment {
    pub params: ModelParams,
    pub x0: InitialState,
    pub plan: SimPlan,
    pub probes: Vec<Probe>,
    pub out: PathBuf,
    pub suites: Vec<Suite>,
    pub metric: MetricSpec,
    pub seed: u64,
    pub config_hash: String,
}

fn cfg<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{what}: {e}"))
}

fn functional(regime: Regime, u: SelfAdjointOperator, v: SelfAdjointOperator) -> Result<TestFunctional, CliError> {
    Ok(match regime {
        Regime::LaplacePos => TestFunctional::laplace(PsdOperator::new(u).map_err(cfg("probe u"))?),
        Regime::FourierSigned => TestFunctional::fourier(v),
        Regime::MixedSmallT => TestFunctional::mixed(u, v),
        Regime::JointlyDiagonal => TestFunctional::jointly_diagonal(u, v),
        Regime::ExtendedNegative => TestFunctional::extended(u),
    })
}

pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Experiment, CliError> {
    let bytes = std::fs::read(path).map_err(cfg("reading config"))?;
    let config_hash = hex::encode(Sha256::digest(&bytes));
    let raw: ExperimentConfig = serde_json::from_slice(&bytes).map_err(cfg("parsing config"))?;
    let params = ModelParams::try_from(&raw.model).map_err(cfg("model"))?;
    let n = params.dim;
    let seed = overrides.seed.unwrap_or(raw.sim.seed);

    let x0_op = match &raw.initial {
        InitialSpec::Random(RandomInitial::RandomLowRank { rank, scale, seed: own }) => {
            if *rank > n {
                return Err(CliError::Config(format!("initial rank {rank} exceeds dimension {n}")));
            }
            random_low_rank(n, *rank, *scale, own.unwrap_or(seed))
        }
        InitialSpec::Operator(spec) => spec.resolve_psd(n).map_err(cfg("initial state"))?,
    };
    let x0 = InitialState::with_rank(x0_op);

    let grid = raw.sim.t_grid.clone();
    let mut plan = SimPlan::new(params.clone(), x0.clone(), grid.clone(), raw.sim.n_paths, seed, raw.sim.scheme);
    plan.euler_max_step = raw.sim.euler_max_step;
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::Config("sim.t_grid must start at 0 and increase strictly".into()));
    }
    if plan.n_paths == 0 {
        return Err(CliError::Config("sim.n_paths must be positive".into()));
    }

    let mut probes = Vec::with_capacity(raw.probes.len());
    for p in &raw.probes {
        let resolve = |s: &Option<OperatorSpec>| match s {
            Some(s) => s.resolve(n).map_err(cfg(&p.id)),
            None => Ok(SelfAdjointOperator::zeros(n)),
        };
        let f = functional(p.regime, resolve(&p.u)?, resolve(&p.v)?)?;
        f.validate(&params).map_err(cfg(&p.id))?;
        if let Some(t) = p.times.iter().find(|t| !grid.iter().any(|g| g == *t)) {
            return Err(CliError::Config(format!("probe {}: time {t} is not on sim.t_grid", p.id)));
        }
        probes.push(Probe {
            id: p.id.clone(),
            functional: f,
            times: p.times.clone(),
        });
    }

    let mut suites = Vec::new();
    for s in &raw.suites {
        let suite = Suite::parse(s)?;
        if !suites.contains(&suite) {
            suites.push(suite);
        }
    }

    Ok(Experiment {
        params,
        x0,
        plan,
        probes,
        out: overrides.out.clone().unwrap_or(raw.outputs),
        suites,
        metric: raw.metric,
        seed,
        config_hash,
    })
}
