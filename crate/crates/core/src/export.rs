//! File formats: CSV tables, a raw binary sample dump with a JSON sidecar,
//! and JSON reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::feller::TestFamily;
use crate::mc::{ComparisonReport, RankHistogram};
use crate::riccati::RiccatiSolution;
use crate::sim::{SampleStorage, SimPlan, WishartPathSample};
use crate::transform::TransformResult;

fn csv_err(e: csv::Error) -> WishartError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => WishartError::Io(io),
        other => WishartError::Parse(format!("{other:?}")),
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

/// Writes every state as `path,t,i,j,value` rows of `X`.
pub fn write_sample_csv<W: Write>(sample: &WishartPathSample, w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["path", "t", "i", "j", "value"]).map_err(csv_err)?;
    let n = sample.dim();
    for path in 0..sample.n_paths() {
        for (k, t) in sample.times().iter().enumerate() {
            let x = sample.state_matrix(path, k);
            for i in 0..n {
                for j in 0..n {
                    out.serialize((path, t, i, j, x[(i, j)])).map_err(csv_err)?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageKind {
    Factor,
    Full,
}

/// Describes a binary dump: little-endian `f64`, row-major in
/// `(path, time, row, col)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub storage: StorageKind,
    pub shape: [usize; 4],
    pub seed: u64,
    pub min_preclamp_eigenvalue: f64,
    pub plan: SimPlan,
}

pub fn sample_sidecar(sample: &WishartPathSample) -> SampleSidecar {
    let n = sample.dim();
    let (storage, rows) = match &sample.storage {
        SampleStorage::Factor { alpha, .. } => (StorageKind::Factor, *alpha),
        SampleStorage::Full { .. } => (StorageKind::Full, n),
    };
    SampleSidecar {
        storage,
        shape: [sample.n_paths(), sample.n_times(), rows, n],
        seed: sample.plan.seed,
        min_preclamp_eigenvalue: sample.min_preclamp_eigenvalue,
        plan: sample.plan.clone(),
    }
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`.
pub fn write_sample_binary(sample: &WishartPathSample, dir: &Path, stem: &str) -> Result<()> {
    let data = match &sample.storage {
        SampleStorage::Factor { data, .. } | SampleStorage::Full { data } => data,
    };
    let mut bin = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
    for v in data {
        bin.write_all(&v.to_le_bytes())?;
    }
    bin.flush()?;
    write_json(&sample_sidecar(sample), &dir.join(format!("{stem}.json")))
}

/// Reads a dump written by [`write_sample_binary`].
pub fn read_sample_binary(dir: &Path, stem: &str) -> Result<WishartPathSample> {
    let sidecar: SampleSidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(format!("{stem}.json")))?))?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(dir.join(format!("{stem}.bin")))?).read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(WishartError::Parse(format!("binary dump length {} is not a multiple of 8", bytes.len())));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let [paths, times, rows, cols] = sidecar.shape;
    if paths != sidecar.plan.n_paths || times != sidecar.plan.t_grid.len() || cols != sidecar.plan.params.dim {
        return Err(WishartError::Parse("sidecar shape disagrees with its plan".into()));
    }
    let storage = match sidecar.storage {
        StorageKind::Factor => SampleStorage::Factor { alpha: rows, data },
        StorageKind::Full => SampleStorage::Full { data },
    };
    let mut sample = WishartPathSample::from_parts(sidecar.plan, storage)?;
    sample.min_preclamp_eigenvalue = sidecar.min_preclamp_eigenvalue;
    Ok(sample)
}

/// `t,i,j,re,im` rows of every `ψ` on the grid.
pub fn write_riccati_csv<W: Write>(sol: &RiccatiSolution, w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["t", "i", "j", "re", "im"]).map_err(csv_err)?;
    for (t, psi) in sol.t_grid.iter().zip(&sol.psi_values) {
        let m = psi.matrix();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.serialize((t, i, j, m[(i, j)].re, m[(i, j)].im)).map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_reports_csv<W: Write>(reports: &[ComparisonReport], w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record([
        "quantity",
        "closed_re",
        "closed_im",
        "empirical_re",
        "empirical_im",
        "std_error",
        "z_score",
        "n_paths",
        "pass",
    ])
    .map_err(csv_err)?;
    for r in reports {
        out.serialize((
            &r.quantity,
            r.closed_form.re,
            r.closed_form.im,
            r.empirical_mean.re,
            r.empirical_mean.im,
            r.std_error,
            r.z_score,
            r.n_paths,
            r.pass,
        ))
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rank_histogram_csv<W: Write>(h: &RankHistogram, w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["t", "rank", "count"]).map_err(csv_err)?;
    for (t, counts) in h.times.iter().zip(&h.counts) {
        for (rank, count) in counts {
            out.serialize((t, rank, count)).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row of the transform table.
#[derive(Clone, Debug, Serialize)]
pub struct TransformRow {
    pub regime: &'static str,
    pub t: f64,
    pub functional_id: String,
    pub value_re: f64,
    pub value_im: f64,
    pub psi_trace_re: f64,
    pub psi_trace_im: f64,
    pub phi_re: f64,
    pub phi_im: f64,
    pub ball_margin: Option<f64>,
}

impl TransformRow {
    pub fn new(functional_id: impl Into<String>, t: f64, r: &TransformResult) -> Self {
        Self {
            regime: r.regime.name(),
            t,
            functional_id: functional_id.into(),
            value_re: r.value.re,
            value_im: r.value.im,
            psi_trace_re: r.psi_trace_term.re,
            psi_trace_im: r.psi_trace_term.im,
            phi_re: r.phi_term.re,
            phi_im: r.phi_term.im,
            ball_margin: r.diagnostics.ball_margin,
        }
    }
}

pub fn write_transform_csv<W: Write>(rows: &[TransformRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "regime",
        "t",
        "functional_id",
        "value_re",
        "value_im",
        "psi_trace_re",
        "psi_trace_im",
        "phi_re",
        "phi_im",
        "ball_margin",
    ])
    .map_err(csv_err)?;
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `k,weight,y` followed by the row-major entries of `b`.
pub fn write_family_csv<W: Write>(fam: &TestFamily, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let n = fam.dim();
    let mut header = vec!["k".to_string(), "weight".into(), "y".into()];
    for i in 0..n {
        for j in 0..n {
            header.push(format!("b_{i}_{j}"));
        }
    }
    out.write_record(&header).map_err(csv_err)?;
    for (k, p) in fam.pairs().iter().enumerate() {
        let mut row = vec![(k + 1).to_string(), TestFamily::weight(k).to_string(), p.y.to_string()];
        row.extend(p.b.matrix().transpose().iter().map(f64::to_string));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `depth,distance` rows for a sequence of truncation depths.
pub fn write_distances_csv<W: Write>(rows: &[(usize, f64)], w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["depth", "distance"]).map_err(csv_err)?;
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_low_rank, InitialState, ModelParams};
    use crate::sim::{simulate, Scheme};

    fn sample(scheme: Scheme) -> WishartPathSample {
        let p = ModelParams::diagonal(2.0, &[-1.0, -0.5], &[1.0, 0.3], "x").unwrap();
        let x0 = InitialState::with_rank(random_low_rank(2, 2, 1.0, 4));
        simulate(&SimPlan::new(p, x0, vec![0.0, 0.1], 3, 5, scheme)).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (scheme, stem) in [(Scheme::ExactDiagonal, "a"), (Scheme::EulerDirect, "b")] {
            let s = sample(scheme);
            write_sample_binary(&s, dir.path(), stem).unwrap();
            let back = read_sample_binary(dir.path(), stem).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn sample_csv_layout() {
        let s = sample(Scheme::ExactDiagonal);
        let mut buf = Vec::new();
        write_sample_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,t,i,j,value");
        assert_eq!(lines.len(), 1 + 3 * 2 * 4);
        let x = s.state_matrix(0, 0);
        assert_eq!(lines[2], format!("0,0.0,0,1,{:?}", x[(0, 1)]));
    }

    #[test]
    fn histogram_and_reports() {
        let s = sample(Scheme::ExactDiagonal);
        let h = crate::mc::rank_histogram(&s, 1e-8).unwrap();
        let mut buf = Vec::new();
        write_rank_histogram_csv(&h, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,rank,count\n0.0,2,3\n"));
        let r = crate::mc::moment_check(&s, 0.1).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
        let fam = crate::feller::canonical_test_family(2, 4).unwrap();
        let mut buf = Vec::new();
        write_family_csv(&fam, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("k,weight,y,b_0_0,b_0_1,b_1_0,b_1_1\n1,0.5,1,0,0,0,0\n"));
    }
}
