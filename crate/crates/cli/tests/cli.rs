use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wishart-lab"))
}

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/dirichlet-example.json")
}

fn small_config(alpha: f64, suites: &[&str]) -> serde_json::Value {
    serde_json::json!({
        "model": {
            "dim": 3,
            "alpha": alpha,
            "generator": {"type": "diagonal", "values": [-1.0, -2.0, -3.0]},
            "q": {"type": "diagonal", "values": [1.0, 0.5, 0.25]}
        },
        "initial": {"type": "diagonal", "values": [0.5, 0.0, 0.0]},
        "sim": {"scheme": "exact-diagonal", "t_grid": [0.0, 0.2, 0.4], "n_paths": 2000, "seed": 3},
        "probes": [
            {"id": "u", "regime": "laplace-pos", "u": {"type": "identity"}, "times": [0.2, 0.4]}
        ],
        "suites": suites
    })
}

fn write_config(dir: &Path, value: &serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> i32 {
    bin()
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("WISHART_LAB_THREADS")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn empty_suite_list_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(2.0, &[]));
    let out = dir.path().join("out");
    assert_eq!(run(&cfg, &out, &[]), 0);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["suites"].as_array().unwrap().len(), 0);
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn bundled_example_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&bundled(), &a, &["--threads", "1"]), 0);
    let status = bin()
        .args(["run", "--config"])
        .arg(bundled())
        .arg("--out")
        .arg(&b)
        .env("WISHART_LAB_THREADS", "3")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let (fa, fb) = (read_dir(&a), read_dir(&b));
    assert!(fa.contains_key("transform.csv") && fa.contains_key("validate.json"));
    assert_eq!(fa, fb);
    let summary: serde_json::Value = serde_json::from_slice(&fa["summary.json"]).unwrap();
    let names: Vec<&str> = summary["suites"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["transform", "validate", "riccati-check", "metric"]);
}

#[test]
fn non_integer_alpha_with_simulation_is_inadmissible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(1.5, &["validate"]));
    assert_eq!(run(&cfg, &dir.path().join("out"), &[]), 3);
    // Closed forms alone remain available.
    let cfg = write_config(dir.path(), &small_config(1.5, &["transform", "riccati-check"]));
    assert_eq!(run(&cfg, &dir.path().join("out"), &[]), 0);
}

#[test]
fn malformed_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, b"{ not json").unwrap();
    assert_eq!(run(&path, &dir.path().join("o1"), &[]), 2);
    let cfg = write_config(dir.path(), &small_config(2.0, &["no-such-suite"]));
    assert_eq!(run(&cfg, &dir.path().join("o2"), &[]), 2);
    let mut off_grid = small_config(2.0, &["transform"]);
    off_grid["probes"][0]["times"] = serde_json::json!([0.3]);
    let cfg = write_config(dir.path(), &off_grid);
    assert_eq!(run(&cfg, &dir.path().join("o3"), &[]), 2);
}

#[test]
fn suite_filter_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(2.0, &["transform", "validate", "metric"]));
    let out = dir.path().join("out");
    assert_eq!(run(&cfg, &out, &["--suite", "metric", "--seed", "99"]), 0);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 99);
    assert_eq!(summary["suites"].as_array().unwrap().len(), 1);
    assert_eq!(summary["suites"][0]["name"], "metric");
}

#[test]
fn failing_suite_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(2.0, &["metric"]);
    // Decay scales that are not increasing make the probe fail.
    cfg["metric"] = serde_json::json!({"decay_scales": [10.0, 1.0]});
    let path = write_config(dir.path(), &cfg);
    assert_eq!(run(&path, &dir.path().join("out"), &[]), 1);
}

#[test]
fn simulate_then_validate_reuses_the_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(2.0, &[]));
    let out = dir.path().join("out");
    let status = |cmd: &str| {
        bin().args([cmd, "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap().code().unwrap()
    };
    assert_eq!(status("simulate"), 0);
    let before = std::fs::metadata(out.join("sample.bin")).unwrap().modified().unwrap();
    assert_eq!(status("validate"), 0);
    let after = std::fs::metadata(out.join("sample.bin")).unwrap().modified().unwrap();
    assert_eq!(before, after);
    assert!(out.join("rank_histogram.csv").exists());
}
