//! Monte Carlo checks of simulated samples against closed forms.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::model::mean_state;
use crate::operator::{rank_eps, same_dim, PsdOperator, SelfAdjointOperator};
use crate::sim::WishartPathSample;
use crate::transform::TestFunctional;

/// Per-probe pass threshold on `|z|`.
pub const Z_MAX: f64 = 4.0;
/// Probes above this `|z|` are counted by the battery rule.
pub const BATTERY_Z: f64 = 3.0;
/// A battery fails when more than this many probes exceed [`BATTERY_Z`].
pub const BATTERY_ALLOWED: usize = 2;
/// Relative eigenvalue cut-off for empirical ranks.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub quantity: String,
    pub closed_form: Complex64,
    pub empirical_mean: Complex64,
    pub std_error: f64,
    pub z_score: f64,
    pub n_paths: usize,
    pub pass: bool,
}

fn z_of(diff: f64, se: f64, reference: f64) -> f64 {
    if diff == 0.0 {
        return 0.0;
    }
    diff / se.max(1e-12 * (1.0 + reference))
}

impl ComparisonReport {
    /// Empirical mean against an exact value.
    pub fn against_closed(
        quantity: impl Into<String>,
        closed_form: Complex64,
        empirical_mean: Complex64,
        std_error: f64,
        n_paths: usize,
    ) -> Self {
        let z_score = z_of((empirical_mean - closed_form).norm(), std_error, closed_form.norm());
        Self {
            quantity: quantity.into(),
            closed_form,
            empirical_mean,
            std_error,
            z_score,
            n_paths,
            pass: z_score <= Z_MAX,
        }
    }

    /// Two independent estimates; `closed_form` holds the second one and the
    /// standard errors are pooled.
    pub fn two_sample(
        quantity: impl Into<String>,
        mean_a: Complex64,
        se_a: f64,
        mean_b: Complex64,
        se_b: f64,
        n_paths: usize,
    ) -> Self {
        let se = se_a.hypot(se_b);
        let z_score = z_of((mean_a - mean_b).norm(), se, mean_b.norm());
        Self {
            quantity: quantity.into(),
            closed_form: mean_b,
            empirical_mean: mean_a,
            std_error: se,
            z_score,
            n_paths,
            pass: z_score <= Z_MAX,
        }
    }

    /// Component-wise z-scores `(re, im)` against the closed form.
    pub fn component_z(&self, se_re: f64, se_im: f64) -> (f64, f64) {
        let d = self.empirical_mean - self.closed_form;
        (
            z_of(d.re.abs(), se_re, self.closed_form.re.abs()),
            z_of(d.im.abs(), se_im, self.closed_form.im.abs()),
        )
    }
}

/// Mean and standard error of per-path values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: Complex64,
    pub se_re: f64,
    pub se_im: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(values: &[Complex64]) -> Self {
        let n = values.len();
        let nf = n as f64;
        let mean = values.iter().sum::<Complex64>() / nf;
        let (se_re, se_im) = if n < 2 {
            (0.0, 0.0)
        } else {
            let (sr, si) = values.iter().fold((0.0, 0.0), |(sr, si), z| {
                let d = z - mean;
                (sr + d.re * d.re, si + d.im * d.im)
            });
            ((sr / (nf - 1.0) / nf).sqrt(), (si / (nf - 1.0) / nf).sqrt())
        };
        Self { mean, se_re, se_im, n }
    }

    pub fn std_error(&self) -> f64 {
        self.se_re.hypot(self.se_im)
    }
}

fn per_path<T: Send>(sample: &WishartPathSample, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..sample.n_paths()).into_par_iter().map(f).collect()
}

/// Path values of `exp(-trace((u - iv) X_t))`.
pub fn transform_values(sample: &WishartPathSample, f: &TestFunctional, t: f64) -> Result<Vec<Complex64>> {
    same_dim(sample.dim(), f.dim())?;
    let k = sample.time_index(t)?;
    let (u, v) = (f.u.matrix(), f.v.matrix());
    let u_zero = f.u.is_zero();
    let v_zero = f.v.is_zero();
    Ok(per_path(sample, |path| {
        let re = if u_zero { 0.0 } else { sample.trace_against(path, k, u) };
        let im = if v_zero { 0.0 } else { sample.trace_against(path, k, v) };
        Complex64::new(-re, im).exp()
    }))
}

/// Full estimate of the transform at `(f, t)`.
pub fn transform_estimate(sample: &WishartPathSample, f: &TestFunctional, t: f64) -> Result<Estimate> {
    Ok(Estimate::from_values(&transform_values(sample, f, t)?))
}

/// Path average and standard error of `exp(-trace((u - iv) X_t))`.
pub fn empirical_transform(sample: &WishartPathSample, f: &TestFunctional, t: f64) -> Result<(Complex64, f64)> {
    let e = transform_estimate(sample, f, t)?;
    Ok((e.mean, e.std_error()))
}

/// Real Laplace transform estimate `E[exp(-trace(u X_t))]`.
pub fn empirical_laplace(sample: &WishartPathSample, u: &PsdOperator, t: f64) -> Result<(f64, f64)> {
    let f = TestFunctional::laplace(u.clone());
    let e = transform_estimate(sample, &f, t)?;
    Ok((e.mean.re, e.se_re))
}

/// Empirical `E[exp(i r trace X_t)]` with component standard errors.
pub fn empirical_trace_cf(sample: &WishartPathSample, r: f64, t: f64) -> Result<Estimate> {
    let k = sample.time_index(t)?;
    let values = per_path(sample, |path| Complex64::new(0.0, r * sample.trace_state(path, k)).exp());
    Ok(Estimate::from_values(&values))
}

/// Compares an estimate with a closed form value.
pub fn compare_transform(
    sample: &WishartPathSample,
    f: &TestFunctional,
    t: f64,
    closed: Complex64,
    quantity: impl Into<String>,
) -> Result<ComparisonReport> {
    let e = transform_estimate(sample, f, t)?;
    Ok(ComparisonReport::against_closed(quantity, closed, e.mean, e.std_error(), e.n))
}

/// Per-time rank counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub tol: f64,
    pub times: Vec<f64>,
    /// `counts[k][r]` = number of paths with rank `r` at `times[k]`.
    pub counts: Vec<BTreeMap<usize, usize>>,
}

impl RankHistogram {
    /// Fraction of `(path, t > 0)` pairs with the given rank.
    pub fn fraction_positive_times(&self, rank: usize) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for (t, c) in self.times.iter().zip(&self.counts) {
            if *t > 0.0 {
                hit += c.get(&rank).copied().unwrap_or(0);
                total += c.values().sum::<usize>();
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    /// Number of `(path, t)` pairs with rank above `bound`.
    pub fn count_above(&self, bound: usize) -> usize {
        self.counts
            .iter()
            .flat_map(|c| c.iter())
            .filter(|(r, _)| **r > bound)
            .map(|(_, n)| n)
            .sum()
    }
}

/// Histogram of `rank_eps(X_t, tol)` at every grid time. For factor storage
/// the rank is read off the `α×α` Gram matrix `Y Yᵀ`, which has the same
/// non-zero spectrum as `X`.
pub fn rank_histogram(sample: &WishartPathSample, tol: f64) -> Result<RankHistogram> {
    if !(tol > 0.0) {
        return Err(WishartError::InvalidParameter(format!("rank tolerance {tol}")));
    }
    let mut counts = Vec::with_capacity(sample.n_times());
    for k in 0..sample.n_times() {
        let ranks = per_path(sample, |path| {
            let m: DMatrix<f64> = match sample.y_state(path, k) {
                Some(y) => &y * y.transpose(),
                None => sample.state_matrix(path, k),
            };
            rank_eps(&SelfAdjointOperator::new(m).expect("finite state"), tol)
        });
        let mut hist = BTreeMap::new();
        for r in ranks {
            *hist.entry(r).or_insert(0) += 1;
        }
        counts.push(hist);
    }
    Ok(RankHistogram {
        tol,
        times: sample.times().to_vec(),
        counts,
    })
}

/// Path mean of `trace(X_t)` against `trace(Sᵀx₀S) + α trace(Q_t)`.
pub fn moment_check(sample: &WishartPathSample, t: f64) -> Result<ComparisonReport> {
    let k = sample.time_index(t)?;
    let p = &sample.plan.params;
    let closed = mean_state(p, &sample.plan.x0.x0, t)?.trace();
    let values: Vec<Complex64> = per_path(sample, |path| Complex64::new(sample.trace_state(path, k), 0.0));
    let e = Estimate::from_values(&values);
    Ok(ComparisonReport::against_closed(
        format!("mean trace at t = {t}"),
        Complex64::new(closed, 0.0),
        e.mean,
        e.std_error(),
        e.n,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryVerdict {
    pub probes: usize,
    pub above_battery_z: usize,
    pub above_z_max: usize,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Family-wise rule over a set of probes: no probe above [`Z_MAX`] and at
/// most [`BATTERY_ALLOWED`] above [`BATTERY_Z`].
pub fn battery_verdict(reports: &[ComparisonReport]) -> BatteryVerdict {
    let above_battery_z = reports.iter().filter(|r| r.z_score > BATTERY_Z).count();
    let above_z_max = reports.iter().filter(|r| !r.pass).count();
    let max_abs_z = reports.iter().map(|r| r.z_score).fold(0.0, f64::max);
    BatteryVerdict {
        probes: reports.len(),
        above_battery_z,
        above_z_max,
        max_abs_z,
        pass: above_z_max == 0 && above_battery_z <= BATTERY_ALLOWED,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_low_rank, InitialState, ModelParams};
    use crate::sim::{simulate, Scheme, SimPlan};
    use crate::transform::laplace_closed;

    fn plan(n_paths: usize) -> SimPlan {
        let p = ModelParams::diagonal(2.0, &[-1.0, -0.3], &[0.8, 0.4], "mc").unwrap();
        let x0 = InitialState::with_rank(random_low_rank(2, 2, 1.0, 11));
        SimPlan::new(p, x0, vec![0.0, 0.2, 0.5], n_paths, 9, Scheme::ExactDiagonal)
    }

    #[test]
    fn zero_functional_is_exactly_one() {
        let s = simulate(&plan(50)).unwrap();
        let f = TestFunctional::laplace(PsdOperator::zeros(2));
        let (m, se) = empirical_transform(&s, &f, 0.5).unwrap();
        assert_eq!(m, Complex64::new(1.0, 0.0));
        assert_eq!(se, 0.0);
    }

    #[test]
    fn single_path_value() {
        let s = simulate(&plan(1)).unwrap();
        let u = random_low_rank(2, 2, 1.0, 3);
        let (m, se) = empirical_laplace(&s, &u, 0.2).unwrap();
        let x = s.state_matrix(0, 1);
        assert!((m - (-(u.matrix() * x).trace()).exp()).abs() < 1e-14);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn off_grid_time() {
        let s = simulate(&plan(2)).unwrap();
        let u = PsdOperator::identity(2);
        assert!(matches!(empirical_laplace(&s, &u, 0.3), Err(WishartError::TimeNotOnGrid(_))));
        assert!(matches!(moment_check(&s, 0.3), Err(WishartError::TimeNotOnGrid(_))));
    }

    #[test]
    fn laplace_agreement_small_model() {
        let pl = plan(20_000);
        let s = simulate(&pl).unwrap();
        let u = random_low_rank(2, 2, 1.0, 4);
        let closed = laplace_closed(&pl.params, &pl.x0.x0, &u, 0.5).unwrap().value;
        let r = compare_transform(&s, &TestFunctional::laplace(u), 0.5, closed, "laplace").unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.std_error > 0.0);
    }

    #[test]
    fn moments_at_zero_and_noiseless() {
        let s = simulate(&plan(10)).unwrap();
        let r = moment_check(&s, 0.0).unwrap();
        assert!((r.empirical_mean.re - r.closed_form.re).abs() < 1e-12);
        let mut pl = plan(10);
        pl.params.q = PsdOperator::zeros(2);
        let s = simulate(&pl).unwrap();
        let r = moment_check(&s, 0.5).unwrap();
        assert!((r.empirical_mean.re - r.closed_form.re).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn rank_histograms() {
        let s = simulate(&plan(100)).unwrap();
        let h = rank_histogram(&s, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(h.counts[0].get(&2), Some(&100));
        assert_eq!(h.count_above(2), 0);
        let mut pl = plan(20);
        pl.params.q = PsdOperator::zeros(2);
        pl.x0 = InitialState::zero(2);
        let h = rank_histogram(&simulate(&pl).unwrap(), DEFAULT_RANK_TOL).unwrap();
        assert!(h.counts.iter().all(|c| c.get(&0) == Some(&20)));
        assert!(rank_histogram(&s, 0.0).is_err());
    }

    #[test]
    fn battery_rule() {
        let mk = |z: f64| ComparisonReport {
            quantity: String::new(),
            closed_form: Complex64::new(0.0, 0.0),
            empirical_mean: Complex64::new(0.0, 0.0),
            std_error: 1.0,
            z_score: z,
            n_paths: 2,
            pass: z <= Z_MAX,
        };
        let mut reports: Vec<_> = (0..20).map(|_| mk(0.5)).collect();
        reports[0] = mk(3.5);
        reports[1] = mk(3.2);
        assert!(battery_verdict(&reports).pass);
        reports[2] = mk(3.1);
        assert!(!battery_verdict(&reports).pass);
    }
}
