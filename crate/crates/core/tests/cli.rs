use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rhflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhflow")).args(args).output().expect("binary runs")
}

fn run_config(sub: &str, config: &Path, out: &Path) -> Output {
    rhflow(&[sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: PathBuf) -> Vec<Vec<f64>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| if c.is_empty() { f64::NAN } else { c.parse().unwrap() }).collect())
        .collect()
}

#[test]
fn csv_header_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config("run", &configs().join("product_normalized.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/series_header.csv")).unwrap();
    let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), golden.trim_end());
    assert!(tmp.path().join("resolved_config.json").exists());
}

#[test]
fn sphere_run_ends_at_the_singularity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config("run", &configs().join("sphere_a05.json"), tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(tmp.path().join("singularity_report.json"));
    // c(t) = 1 − t, so the extinction time is exactly 1.
    assert!((report["t_sing"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    let rows = csv_rows(tmp.path().join("series.csv"));
    assert!((rows.last().unwrap()[0] - 1.0).abs() < 1e-5);
    assert_eq!(read_json(tmp.path().join("monitor_report.json"))["passed"], Value::Bool(true));
}

#[test]
fn identical_runs_give_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("perturbed_torus.json");
    assert_eq!(run_config("run", &cfg, a.path()).status.code(), Some(0));
    assert_eq!(run_config("run", &cfg, b.path()).status.code(), Some(0));
    assert_eq!(fs::read(a.path().join("series.csv")).unwrap(), fs::read(b.path().join("series.csv")).unwrap());
    assert_eq!(
        fs::read(a.path().join("checkpoint_000005.rhck")).unwrap(),
        fs::read(b.path().join("checkpoint_000005.rhck")).unwrap()
    );
}

#[test]
fn resumed_run_reproduces_the_tail() {
    let full = tempfile::tempdir().unwrap();
    assert_eq!(run_config("run", &configs().join("perturbed_torus.json"), full.path()).status.code(), Some(0));
    let ck = full.path().join("checkpoint_000005.rhck");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "resume.json",
        &format!(
            r#"{{"scenario": "pde", "seed": 7, "alpha": 1.0, "t_end": 0.5, "sample_interval": 0.05,
                "grid": {{"n": 24, "metric": {{"kind": "smooth", "amp": 0.1}}, "map": {{"kind": "smooth", "amp": 0.3}}}},
                "checkpoint": {{"resume": {:?}}}}}"#,
            ck.to_str().unwrap()
        ),
    );
    let out_dir = tmp.path().join("out");
    let out = run_config("run", &cfg, &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let whole = csv_rows(full.path().join("series.csv"));
    let tail = csv_rows(out_dir.join("series.csv"));
    assert_eq!(tail.len(), 6);
    for (a, b) in whole[5..].iter().zip(&tail) {
        // Geometric columns are bitwise identical; functionals depend on the run's end data only.
        assert_eq!(a[..6], b[..6]);
    }
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"scenario": "homogeneous", "homogeneous": {"model": "sphere2"}, "alpha": -0.5, "t_end": 1}"#,
    );
    let out = run_config("run", &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`alpha`"));

    let cfg = write_config(
        tmp.path(),
        "increasing.json",
        r#"{"scenario": "homogeneous", "homogeneous": {"model": "sphere2"}, "t_end": 1,
            "schedule": {"kind": "piecewise-linear", "times": [0, 1], "values": [0.2, 0.8]}}"#,
    );
    let out = run_config("run", &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-increasing"));

    let out = rhflow(&["functionals", "--config", configs().join("sphere_a05.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_rhflow"))
        .args(["verify", "--suite", "bochner", "--out", tmp.path().to_str().unwrap()])
        .env("RHFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn monitor_failure_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "strict.json",
        r#"{"scenario": "pde", "seed": 7, "alpha": 1.0, "t_end": 0.3, "sample_interval": 0.05,
            "grid": {"n": 16, "metric": {"kind": "smooth", "amp": 0.1}, "map": {"kind": "smooth", "amp": 0.3}},
            "monitors": {"evolution_tol": 1e-12, "gradient_bound": 1e-3}}"#,
    );
    let out = run_config("run", &cfg, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(tmp.path().join("out/monitor_report.json"));
    assert_eq!(report["passed"], Value::Bool(false));
    assert_eq!(report["gradient_estimate"]["verdict"]["status"], "FAIL");
    // A tolerance below the resolvable discretization error is reported, not failed.
    assert_eq!(report["checks"][0]["verdict"]["status"], "WARN");
}

#[test]
fn verify_evolution_meets_refinement_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rhflow"))
        .args(["verify", "--suite", "evolution", "--refine", "1", "--out", tmp.path().to_str().unwrap()])
        .env("RHFLOW_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(tmp.path().join("verify_report.json"));
    for c in report["checks"].as_array().unwrap() {
        assert!(c["ratios"][0].as_f64().unwrap() >= 8.0, "{c}");
    }
}

#[test]
fn reduced_volume_and_functionals_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config("reduced-volume", &configs().join("sphere_reduced_volume.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(tmp.path().join("reduced_volume_report.json"));
    assert_eq!(report["verdict"]["status"], "PASS");

    let out = run_config("functionals", &configs().join("functionals_torus.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(tmp.path().join("series.csv"));
    assert!(rows.iter().all(|r| r[9].is_finite() && r[10].is_finite()));
}
