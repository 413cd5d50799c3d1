//! Path simulation of the OU factor `Y` and of `X = YᵀY`, plus a direct Euler
//! scheme on `X` for cross-validation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::mc::{empirical_laplace, ComparisonReport};
use crate::model::{factor_initial, validate_parameters, InitialState, ModelParams};
use crate::operator::{psd_sqrt, same_dim, spectrum, GeneratorSpec, PsdOperator, SelfAdjointOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact Gaussian recursion per coordinate; diagonal `A` and `Q` only.
    ExactDiagonal,
    /// Left-point Euler on `Y`.
    EulerOu,
    /// Euler on `X` with PSD projection after every step.
    EulerDirect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub params: ModelParams,
    pub x0: InitialState,
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Overrides the default Euler substep bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euler_max_step: Option<f64>,
}

impl SimPlan {
    pub fn new(
        params: ModelParams,
        x0: InitialState,
        t_grid: Vec<f64>,
        n_paths: usize,
        seed: u64,
        scheme: Scheme,
    ) -> Self {
        Self {
            params,
            x0,
            t_grid,
            n_paths,
            seed,
            scheme,
            euler_max_step: None,
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.euler_max_step = Some(h);
        self
    }

    pub fn validate(&self) -> Result<usize> {
        let g = &self.t_grid;
        if g.is_empty() || g[0] != 0.0 || g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|t| !t.is_finite()) {
            return Err(WishartError::GridNotIncreasing);
        }
        if self.n_paths == 0 {
            return Err(WishartError::InvalidParameter("n_paths must be >= 1".into()));
        }
        same_dim(self.params.dim, self.x0.dim())?;
        let report = validate_parameters(&self.params, &self.x0, false);
        if !report.admissible_for_simulation {
            return Err(WishartError::InadmissibleParameters(format!(
                "alpha = {} (integer: {}), initial rank within alpha: {}",
                self.params.alpha, report.alpha_integer, report.rank_ok
            )));
        }
        if self.scheme == Scheme::ExactDiagonal && !self.params.is_jointly_diagonal() {
            return Err(WishartError::NotJointlyDiagonal);
        }
        if let Some(h) = self.euler_max_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(WishartError::InvalidParameter(format!("euler_max_step = {h}")));
            }
        }
        Ok(self.params.alpha.round() as usize)
    }

    /// `1e-3 / max(1, ‖A‖_∞)` unless overridden.
    pub fn max_substep(&self) -> f64 {
        self.euler_max_step
            .unwrap_or_else(|| 1e-3 / self.params.generator.inf_norm().max(1.0))
    }
}

/// RNG stream of one path: a pure function of `(seed, path)`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Raw per-path states, path-major then time-major, each block row-major.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleStorage {
    /// `α×N` factors `Y`.
    Factor { alpha: usize, data: Vec<f64> },
    /// `N×N` states `X`.
    Full { data: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WishartPathSample {
    pub plan: SimPlan,
    pub storage: SampleStorage,
    /// Smallest eigenvalue seen before PSD projection (`0` for factor storage).
    pub min_preclamp_eigenvalue: f64,
}

impl WishartPathSample {
    pub fn from_parts(plan: SimPlan, storage: SampleStorage) -> Result<Self> {
        let n = plan.params.dim;
        let block = match &storage {
            SampleStorage::Factor { alpha, .. } => alpha * n,
            SampleStorage::Full { .. } => n * n,
        };
        let len = match &storage {
            SampleStorage::Factor { data, .. } | SampleStorage::Full { data } => data.len(),
        };
        let expected = plan.n_paths * plan.t_grid.len() * block;
        if len != expected {
            return Err(WishartError::DimMismatch { expected, found: len });
        }
        Ok(Self {
            plan,
            storage,
            min_preclamp_eigenvalue: 0.0,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.plan.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.plan.t_grid.len()
    }

    pub fn dim(&self) -> usize {
        self.plan.params.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.plan.t_grid
    }

    /// Index of `t` in the grid, allowing `1e-12` relative slack.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.plan
            .t_grid
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or(WishartError::TimeNotOnGrid(t))
    }

    fn block(&self) -> usize {
        let n = self.dim();
        match &self.storage {
            SampleStorage::Factor { alpha, .. } => alpha * n,
            SampleStorage::Full { .. } => n * n,
        }
    }

    fn slice(&self, path: usize, k: usize) -> &[f64] {
        let b = self.block();
        let start = (path * self.n_times() + k) * b;
        match &self.storage {
            SampleStorage::Factor { data, .. } | SampleStorage::Full { data } => &data[start..start + b],
        }
    }

    /// `Y` at grid index `k`, when retained.
    pub fn y_state(&self, path: usize, k: usize) -> Option<DMatrix<f64>> {
        match &self.storage {
            SampleStorage::Factor { alpha, .. } => Some(DMatrix::from_row_slice(*alpha, self.dim(), self.slice(path, k))),
            SampleStorage::Full { .. } => None,
        }
    }

    /// `X` at grid index `k` as a raw symmetric matrix.
    pub fn state_matrix(&self, path: usize, k: usize) -> DMatrix<f64> {
        let n = self.dim();
        match &self.storage {
            SampleStorage::Factor { alpha, .. } => {
                let y = DMatrix::from_row_slice(*alpha, n, self.slice(path, k));
                y.transpose() * y
            }
            SampleStorage::Full { .. } => DMatrix::from_row_slice(n, n, self.slice(path, k)),
        }
    }

    pub fn state(&self, path: usize, k: usize) -> PsdOperator {
        PsdOperator::project(&SelfAdjointOperator::new(self.state_matrix(path, k)).expect("stored states are finite"))
    }

    /// `trace(m X)` for symmetric `m` without forming `X` from the factor.
    pub fn trace_against(&self, path: usize, k: usize, m: &DMatrix<f64>) -> f64 {
        let n = self.dim();
        match &self.storage {
            SampleStorage::Factor { alpha, .. } => {
                let y = DMatrix::from_row_slice(*alpha, n, self.slice(path, k));
                (&y * m).component_mul(&y).sum()
            }
            SampleStorage::Full { .. } => {
                let x = self.slice(path, k);
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += x[i * n + j] * m[(j, i)];
                    }
                }
                acc
            }
        }
    }

    pub fn trace_state(&self, path: usize, k: usize) -> f64 {
        let x = self.slice(path, k);
        let n = self.dim();
        match &self.storage {
            SampleStorage::Factor { .. } => x.iter().map(|v| v * v).sum(),
            SampleStorage::Full { .. } => (0..n).map(|i| x[i * n + i]).sum(),
        }
    }

    pub fn is_factor(&self) -> bool {
        matches!(self.storage, SampleStorage::Factor { .. })
    }
}

struct Prepared {
    n: usize,
    alpha: usize,
    a_diag: Option<Vec<f64>>,
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    q_diag: Vec<f64>,
    sqrt_q: DMatrix<f64>,
    y0: DMatrix<f64>,
    x0: DMatrix<f64>,
    max_step: f64,
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn substeps(dt: f64, max_step: f64) -> (usize, f64) {
    let m = (dt / max_step).ceil().max(1.0) as usize;
    (m, dt / m as f64)
}

fn simulate_exact(pre: &Prepared, grid: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let (n, alpha) = (pre.n, pre.alpha);
    let a = pre.a_diag.as_ref().expect("exact scheme needs a diagonal generator");
    let mut y = pre.y0.clone();
    out[..alpha * n].copy_from_slice(y.transpose().as_slice());
    for k in 1..grid.len() {
        let dt = grid[k] - grid[k - 1];
        for j in 0..n {
            let decay = (a[j] * dt).exp();
            let var = pre.q_diag[j] * crate::model::expm1_ratio(2.0 * a[j], dt);
            let sd = var.max(0.0).sqrt();
            for i in 0..alpha {
                let xi: f64 = StandardNormal.sample(rng);
                y[(i, j)] = y[(i, j)] * decay + sd * xi;
            }
        }
        out[k * alpha * n..(k + 1) * alpha * n].copy_from_slice(y.transpose().as_slice());
    }
}

fn simulate_euler_ou(pre: &Prepared, grid: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let (n, alpha) = (pre.n, pre.alpha);
    let mut y = pre.y0.clone();
    out[..alpha * n].copy_from_slice(y.transpose().as_slice());
    for k in 1..grid.len() {
        let (m, h) = substeps(grid[k] - grid[k - 1], pre.max_step);
        let sh = h.sqrt();
        for _ in 0..m {
            let g = standard_normal_matrix(rng, alpha, n);
            let drift = match &pre.a_diag {
                Some(a) => {
                    let mut d = y.clone();
                    for (j, mut col) in d.column_iter_mut().enumerate() {
                        col *= a[j];
                    }
                    d
                }
                None => &y * &pre.a,
            };
            y += drift * h + g * &pre.sqrt_q * sh;
        }
        out[k * alpha * n..(k + 1) * alpha * n].copy_from_slice(y.transpose().as_slice());
    }
}

/// Returns the smallest eigenvalue observed before projection.
fn simulate_euler_direct(pre: &Prepared, alpha_f: f64, grid: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) -> f64 {
    let n = pre.n;
    let mut x = pre.x0.clone();
    let mut min_seen = f64::INFINITY;
    let mut sp = spectrum(&x);
    out[..n * n].copy_from_slice(x.transpose().as_slice());
    let at = pre.a.transpose();
    for k in 1..grid.len() {
        let (m, h) = substeps(grid[k] - grid[k - 1], pre.max_step);
        let sh = h.sqrt();
        for _ in 0..m {
            let root = sp.map(|v| v.max(0.0).sqrt());
            let g = standard_normal_matrix(rng, n, n);
            let noise = &root * g * &pre.sqrt_q * sh;
            let drift = &pre.q * alpha_f + &x * &pre.a + &at * &x;
            let mut next = &x + drift * h + &noise + noise.transpose();
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = 0.5 * (next[(i, j)] + next[(j, i)]);
                    next[(i, j)] = v;
                    next[(j, i)] = v;
                }
            }
            sp = spectrum(&next);
            let lo = sp.min();
            min_seen = min_seen.min(lo);
            x = if lo < 0.0 { sp.map(|v| v.max(0.0)) } else { next };
        }
        out[k * n * n..(k + 1) * n * n].copy_from_slice(x.transpose().as_slice());
    }
    min_seen
}

/// Simulates all paths of `plan` in parallel; the output does not depend on
/// the number of threads.
pub fn simulate(plan: &SimPlan) -> Result<WishartPathSample> {
    let alpha = plan.validate()?;
    let p = &plan.params;
    let n = p.dim;
    let q = p.q.matrix().clone();
    let pre = Prepared {
        n,
        alpha,
        a_diag: p.generator.diagonal().map(<[f64]>::to_vec),
        a: p.generator.matrix(),
        q_diag: p.q.diagonal(),
        sqrt_q: psd_sqrt(&p.q).into_self_adjoint().into_matrix(),
        q,
        y0: factor_initial(&plan.x0, alpha)?,
        x0: plan.x0.x0.matrix().clone(),
        max_step: plan.max_substep(),
    };
    let n_times = plan.t_grid.len();
    let grid = &plan.t_grid;

    let (storage, min_pre) = match plan.scheme {
        Scheme::ExactDiagonal | Scheme::EulerOu => {
            let block = alpha * n * n_times;
            let mut data = vec![0.0; block * plan.n_paths];
            if block > 0 {
                data.par_chunks_mut(block).enumerate().for_each(|(path, out)| {
                    let mut rng = path_rng(plan.seed, path);
                    if plan.scheme == Scheme::ExactDiagonal {
                        simulate_exact(&pre, grid, &mut rng, out);
                    } else {
                        simulate_euler_ou(&pre, grid, &mut rng, out);
                    }
                });
            }
            (SampleStorage::Factor { alpha, data }, 0.0)
        }
        Scheme::EulerDirect => {
            let block = n * n * n_times;
            let mut data = vec![0.0; block * plan.n_paths];
            let mins: Vec<f64> = data
                .par_chunks_mut(block)
                .enumerate()
                .map(|(path, out)| {
                    let mut rng = path_rng(plan.seed, path);
                    simulate_euler_direct(&pre, p.alpha, grid, &mut rng, out)
                })
                .collect();
            let min_pre = mins.into_iter().fold(f64::INFINITY, f64::min);
            (SampleStorage::Full { data }, if min_pre.is_finite() { min_pre } else { 0.0 })
        }
    };
    let mut sample = WishartPathSample::from_parts(plan.clone(), storage)?;
    sample.min_preclamp_eigenvalue = min_pre;
    Ok(sample)
}

fn compatible(a: &SimPlan, b: &SimPlan, t: f64) -> Result<()> {
    if a.params != b.params {
        return Err(WishartError::IncompatiblePlans("model parameters differ".into()));
    }
    if a.x0 != b.x0 {
        return Err(WishartError::IncompatiblePlans("initial states differ".into()));
    }
    let on = |g: &[f64]| g.iter().any(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0));
    if !on(&a.t_grid) || !on(&b.t_grid) {
        return Err(WishartError::IncompatiblePlans(format!("t = {t} is not on both grids")));
    }
    Ok(())
}

/// Compares `E[exp(-trace(uX_t))]` between two already simulated samples.
pub fn compare_samples(
    a: &WishartPathSample,
    b: &WishartPathSample,
    u: &PsdOperator,
    t: f64,
) -> Result<ComparisonReport> {
    compatible(&a.plan, &b.plan, t)?;
    let (ma, sa) = empirical_laplace(a, u, t)?;
    let (mb, sb) = empirical_laplace(b, u, t)?;
    Ok(ComparisonReport::two_sample(
        format!("laplace {:?} vs {:?} at t = {t}", a.plan.scheme, b.plan.scheme),
        ma.into(),
        sa,
        mb.into(),
        sb,
        a.n_paths().min(b.n_paths()),
    ))
}

/// Simulates both plans and compares their Laplace transforms at `(u, t)`.
pub fn cross_validate_schemes(plan_a: &SimPlan, plan_b: &SimPlan, u: &PsdOperator, t: f64) -> Result<ComparisonReport> {
    compatible(plan_a, plan_b, t)?;
    same_dim(plan_a.params.dim, u.dim())?;
    let a = simulate(plan_a)?;
    let b = if plan_a == plan_b { a.clone() } else { simulate(plan_b)? };
    compare_samples(&a, &b, u, t)
}

#[derive(Clone, Debug, Serialize)]
pub struct StepHalvingReport {
    pub coarse_step: f64,
    /// Coarse run against the half-step run (independent seed).
    pub comparison: ComparisonReport,
    pub bias_ok: bool,
}

/// Both runs of a step-halving check.
#[derive(Clone, Debug)]
pub struct StepHalving {
    pub report: StepHalvingReport,
    pub coarse: WishartPathSample,
    pub fine: WishartPathSample,
}

/// Runs an Euler plan at its substep `h` and at `h/2`; the bias check passes
/// when the two Laplace estimates at `(u, t)` agree within the z threshold.
pub fn step_halving(plan: &SimPlan, u: &PsdOperator, t: f64) -> Result<StepHalving> {
    if plan.scheme == Scheme::ExactDiagonal {
        return Err(WishartError::InvalidParameter("step halving applies to Euler schemes".into()));
    }
    let h = plan.max_substep();
    let coarse_plan = plan.clone().with_max_step(h);
    let mut fine_plan = plan.clone().with_max_step(0.5 * h);
    fine_plan.seed = plan.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let coarse = simulate(&coarse_plan)?;
    let fine = simulate(&fine_plan)?;
    let mut comparison = compare_samples(&coarse, &fine, u, t)?;
    comparison.quantity = format!("step halving {:?} at t = {t}", plan.scheme);
    let bias_ok = comparison.pass;
    Ok(StepHalving {
        report: StepHalvingReport {
            coarse_step: h,
            comparison,
            bias_ok,
        },
        coarse,
        fine,
    })
}

/// Deterministic noiseless flow `e^{tA}ᵀ x₀ e^{tA}`.
pub fn deterministic_flow(a: &GeneratorSpec, x0: &PsdOperator, t: f64) -> DMatrix<f64> {
    let s = crate::operator::semigroup_apply(a, t);
    s.transpose() * x0.matrix() * s
}

/// Per-column variance of the exact one-step increments, for diagnostics.
pub fn exact_step_variance(p: &ModelParams, dt: f64) -> Option<DVector<f64>> {
    let a = p.generator.diagonal()?;
    let q = p.q.diagonal();
    Some(DVector::from_iterator(
        p.dim,
        a.iter().zip(&q).map(|(&aj, &qj)| qj * crate::model::expm1_ratio(2.0 * aj, dt)),
    ))
}
