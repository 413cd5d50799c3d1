//! Suite implementations. Each writes its own files under the output
//! directory and returns a summary entry.

use std::fs::File;
use std::io::BufWriter;

use serde::Serialize;
use serde_json::{json, Value};
use wishart_core::export::{
    read_sample_binary, sample_sidecar, write_distances_csv, write_family_csv, write_json, write_rank_histogram_csv,
    write_reports_csv, write_riccati_csv, write_transform_csv, TransformRow,
};
use wishart_core::feller::{
    canonical_test_family, cone_membership, feller_decay_probe, full_separation_depth, wstar_distance, ConePoint,
};
use wishart_core::mc::{battery_verdict, compare_transform, moment_check, rank_histogram, DEFAULT_RANK_TOL};
use wishart_core::model::random_low_rank;
use wishart_core::operator::{ComplexOperator, PsdOperator};
use wishart_core::quadrature::integrate;
use wishart_core::riccati::{
    default_residual_step, flow_check, phi_closed, psi_diagonal, psi_fourier, psi_general, psi_laplace,
    riccati_residual, RiccatiSolution,
};
use wishart_core::sim::{compare_samples, simulate, step_halving, Scheme, WishartPathSample};
use wishart_core::transform::{evaluate, Regime, TestFunctional};
use wishart_core::WishartError;

use crate::config::{Experiment, Suite};
use crate::CliError;

const RESIDUAL_TOL: f64 = 1e-6;
const FLOW_TOL: f64 = 1e-10;
const PHI_TOL: f64 = 1e-8;
const SAMPLE_STEM: &str = "sample";

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub pass: bool,
    pub metrics: Value,
}

pub fn run_suite(exp: &Experiment, suite: Suite) -> Result<SuiteReport, CliError> {
    let (pass, metrics) = match suite {
        Suite::Simulate => simulate_suite(exp)?,
        Suite::Transform => transform_suite(exp)?,
        Suite::Validate => validate_suite(exp)?,
        Suite::RiccatiCheck => riccati_suite(exp)?,
        Suite::Metric => metric_suite(exp)?,
        Suite::CrossValidate => cross_validate_suite(exp)?,
    };
    Ok(SuiteReport {
        name: suite.name(),
        pass,
        metrics,
    })
}

fn create(exp: &Experiment, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(exp.out.join(name))?))
}

fn write_sample(exp: &Experiment, sample: &WishartPathSample) -> Result<(), CliError> {
    wishart_core::export::write_sample_binary(sample, &exp.out, SAMPLE_STEM)?;
    Ok(())
}

/// Reuses the dump in the output directory when it was produced by the same
/// plan; simulates and writes it otherwise.
fn obtain_sample(exp: &Experiment) -> Result<WishartPathSample, CliError> {
    if let Ok(sample) = read_sample_binary(&exp.out, SAMPLE_STEM) {
        if sample.plan == exp.plan {
            return Ok(sample);
        }
    }
    let sample = simulate(&exp.plan)?;
    write_sample(exp, &sample)?;
    Ok(sample)
}

fn simulate_suite(exp: &Experiment) -> Result<(bool, Value), CliError> {
    let sample = simulate(&exp.plan)?;
    write_sample(exp, &sample)?;
    let side = sample_sidecar(&sample);
    Ok((
        true,
        json!({
            "n_paths": sample.n_paths(),
            "n_times": sample.n_times(),
            "shape": side.shape,
            "min_preclamp_eigenvalue": sample.min_preclamp_eigenvalue,
        }),
    ))
}

fn transform_suite(exp: &Experiment) -> Result<(bool, Value), CliError> {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for probe in &exp.probes {
        for &t in &probe.times {
            match evaluate(&exp.params, &exp.x0.x0, &probe.functional, t) {
                Ok(r) => rows.push(TransformRow::new(probe.id.clone(), t, &r)),
                Err(e) => errors.push(format!("{} at t = {t}: {e}", probe.id)),
            }
        }
    }
    write_transform_csv(&rows, create(exp, "transform.csv")?)?;
    write_json(&rows, &exp.out.join("transform.json"))?;
    Ok((errors.is_empty(), json!({ "evaluations": rows.len(), "errors": errors })))
}

fn validate_suite(exp: &Experiment) -> Result<(bool, Value), CliError> {
    let sample = obtain_sample(exp)?;
    let mut reports = Vec::new();
    for probe in &exp.probes {
        for &t in &probe.times {
            let closed = evaluate(&exp.params, &exp.x0.x0, &probe.functional, t)?.value;
            reports.push(compare_transform(
                &sample,
                &probe.functional,
                t,
                closed,
                format!("{} at t = {t}", probe.id),
            )?);
        }
    }
    let battery = battery_verdict(&reports);
    let mut moments = Vec::new();
    for &t in sample.times() {
        moments.push(moment_check(&sample, t)?);
    }
    let hist = rank_histogram(&sample, DEFAULT_RANK_TOL)?;
    let alpha = exp.params.alpha.round() as usize;
    let above_alpha = hist.count_above(alpha);
    let rank_ok = !sample.is_factor() || above_alpha == 0;
    let moments_ok = moments.iter().all(|r| r.pass);

    let mut all = reports.clone();
    all.extend(moments.iter().cloned());
    write_reports_csv(&all, create(exp, "validate.csv")?)?;
    write_rank_histogram_csv(&hist, create(exp, "rank_histogram.csv")?)?;
    write_json(
        &json!({ "transforms": reports, "moments": moments, "battery": battery, "rank_histogram": hist }),
        &exp.out.join("validate.json"),
    )?;
    Ok((
        battery.pass && moments_ok && rank_ok,
        json!({
            "probes": battery.probes,
            "max_abs_z": battery.max_abs_z,
            "above_battery_z": battery.above_battery_z,
            "moments_pass": moments_ok,
            "rank_above_alpha": above_alpha,
            "fraction_at_alpha": hist.fraction_positive_times(alpha),
        }),
    ))
}

fn psi_for(exp: &Experiment, f: &TestFunctional, s: f64) -> wishart_core::Result<ComplexOperator> {
    let p = &exp.params;
    match f.regime {
        Regime::LaplacePos => {
            let u = PsdOperator::new(f.u.clone())?;
            psi_laplace(p, &u, s).map(|m| ComplexOperator::from_real(m.matrix()))
        }
        Regime::FourierSigned => psi_fourier(p, &f.v, s),
        Regime::JointlyDiagonal => psi_diagonal(p, f.complex()?.matrix().diagonal().as_slice(), s),
        Regime::MixedSmallT | Regime::ExtendedNegative => psi_general(p, &f.complex()?, s),
    }
}

fn trajectory(exp: &Experiment, f: &TestFunctional) -> wishart_core::Result<Option<RiccatiSolution>> {
    let p = &exp.params;
    let grid = &exp.plan.t_grid;
    Ok(match f.regime {
        Regime::LaplacePos => Some(RiccatiSolution::laplace(p, &PsdOperator::new(f.u.clone())?, grid)?),
        Regime::FourierSigned => Some(RiccatiSolution::fourier(p, &f.v, grid)?),
        Regime::JointlyDiagonal => Some(RiccatiSolution::diagonal(
            p,
            f.complex()?.matrix().diagonal().as_slice(),
            grid,
        )?),
        _ => None,
    })
}

fn riccati_suite(exp: &Experiment) -> Result<(bool, Value), CliError> {
    let p = &exp.params;
    let mut worst_residual: f64 = 0.0;
    let mut worst_flow: f64 = 0.0;
    let mut worst_phi: f64 = 0.0;
    let mut rows = Vec::new();
    for probe in &exp.probes {
        let f = &probe.functional;
        for &t in probe.times.iter().filter(|t| **t > 0.0) {
            let h = default_residual_step(p, t);
            let residual = riccati_residual(p, |s| psi_for(exp, f, s), t, h)?;
            worst_residual = worst_residual.max(residual);
            let mut row = json!({ "probe": probe.id, "t": t, "residual": residual });
            if f.regime == Regime::LaplacePos {
                let u = PsdOperator::new(f.u.clone())?;
                let flow = flow_check(p, &u, 0.5 * t, 0.5 * t)? / (1.0 + u.operator_norm());
                let quad = p.alpha
                    * integrate(
                        |s| psi_laplace(p, &u, s).map(|m| (m.matrix() * p.q.matrix()).trace()).unwrap_or(f64::NAN),
                        0.0,
                        t,
                    );
                let phi = (quad - phi_closed(p, &u, t)?).abs();
                worst_flow = worst_flow.max(flow);
                worst_phi = if phi.is_nan() { f64::INFINITY } else { worst_phi.max(phi) };
                row["flow"] = json!(flow);
                row["phi"] = json!(phi);
            }
            rows.push(row);
        }
        if let Some(sol) = trajectory(exp, f)? {
            write_riccati_csv(&sol, create(exp, &format!("riccati_{}.csv", probe.id))?)?;
        }
    }
    write_json(&rows, &exp.out.join("riccati.json"))?;
    Ok((
        worst_residual <= RESIDUAL_TOL && worst_flow <= FLOW_TOL && worst_phi <= PHI_TOL,
        json!({ "checks": rows.len(), "max_residual": worst_residual, "max_flow": worst_flow, "max_phi": worst_phi }),
    ))
}

fn metric_suite(exp: &Experiment) -> Result<(bool, Value), CliError> {
    let n = exp.params.dim;
    let m = &exp.metric;
    let depth = m.depth.unwrap_or_else(|| full_separation_depth(n));
    let fam = canonical_test_family(n, depth)?;
    write_family_csv(&fam, create(exp, "family.csv")?)?;

    let points: Vec<ConePoint> = (0..m.points.max(3))
        .map(|k| {
            let seed = exp.seed.wrapping_add(k as u64);
            let x = (k % 7) as f64 * 0.5;
            ConePoint::new(random_low_rank(n, 1 + k % n, 1.0, seed), x)
        })
        .collect::<Result<_, _>>()?;
    let d = |a: &ConePoint, b: &ConePoint| wstar_distance(a, b, &fam);
    let (mut symmetric, mut triangle, mut identity) = (true, 0.0f64, true);
    for w in points.windows(3) {
        let (pq, qp) = (d(&w[0], &w[1])?, d(&w[1], &w[0])?);
        symmetric &= pq == qp;
        triangle = triangle.max(d(&w[0], &w[2])? - pq - d(&w[1], &w[2])?);
        identity &= d(&w[0], &w[0])? == 0.0 && cone_membership(w[0].a.as_self_adjoint(), w[0].x);
    }
    let mut series = Vec::new();
    for k in 1..=depth {
        let f = canonical_test_family(n, k)?;
        series.push((k, wstar_distance(&points[0], &points[1], &f)?));
    }
    write_distances_csv(&series, create(exp, "distances.csv")?)?;

    let trace = exp.x0.x0.trace();
    let base = if trace > 0.0 {
        exp.x0.x0.scale(0.05 / trace)
    } else {
        PsdOperator::identity(n).scale(0.05 / n as f64)
    };
    let t = *exp.plan.t_grid.last().unwrap_or(&0.0);
    let decay = feller_decay_probe(
        &exp.params,
        &PsdOperator::identity(n),
        m.decay_w,
        m.decay_z,
        t,
        &base,
        &m.decay_scales,
    )?;
    let decreasing = decay.windows(2).all(|w| w[1] < w[0]);
    Ok((
        symmetric && triangle <= 1e-15 && identity && decreasing,
        json!({
            "depth": depth,
            "points": points.len(),
            "symmetric": symmetric,
            "max_triangle_excess": triangle,
            "identity": identity,
            "decay": decay,
            "decay_strictly_decreasing": decreasing,
        }),
    ))
}

fn cross_validate_suite(exp: &Experiment) -> Result<(bool, Value), CliError> {
    let n = exp.params.dim;
    let u = exp
        .probes
        .iter()
        .find(|p| p.functional.regime == Regime::LaplacePos)
        .map(|p| PsdOperator::new(p.functional.u.clone()))
        .transpose()?
        .unwrap_or_else(|| PsdOperator::identity(n));
    let t = *exp.plan.t_grid.last().unwrap_or(&0.0);
    let with = |scheme: Scheme, offset: u64| {
        let mut plan = exp.plan.clone();
        plan.scheme = scheme;
        plan.seed = exp.seed.wrapping_add(offset);
        plan
    };
    let ou = step_halving(&with(Scheme::EulerOu, 1), &u, t)?;
    let direct = step_halving(&with(Scheme::EulerDirect, 2), &u, t)?;
    let mut reports = vec![ou.report.comparison.clone(), direct.report.comparison.clone()];
    reports.push(compare_samples(&ou.coarse, &direct.coarse, &u, t)?);
    if exp.params.is_jointly_diagonal() {
        let exact = simulate(&with(Scheme::ExactDiagonal, 0))?;
        reports.push(compare_samples(&exact, &ou.coarse, &u, t)?);
        reports.push(compare_samples(&exact, &direct.coarse, &u, t)?);
    }
    write_reports_csv(&reports, create(exp, "cross_validate.csv")?)?;
    write_json(&reports, &exp.out.join("cross_validate.json"))?;
    let z: Vec<f64> = reports.iter().map(|r| r.z_score).collect();
    Ok((
        reports.iter().all(|r| r.pass),
        json!({ "z_scores": z, "min_preclamp_eigenvalue": direct.coarse.min_preclamp_eigenvalue }),
    ))
}

impl From<WishartError> for CliError {
    fn from(e: WishartError) -> Self {
        match e {
            WishartError::InadmissibleParameters(m) => CliError::Inadmissible(m),
            WishartError::Io(io) => CliError::Io(io),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
