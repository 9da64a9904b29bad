use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tcmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcmix")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated recovery-design profiles in `dir/data.csv` and `dir/truth.csv`.
fn simulated(dir: &Path, n: usize) -> PathBuf {
    let o = tcmix(&[
        "simulate", "--preset", "recovery", "--data-only", "--n-genes", &n.to_string(),
        "--seed", "5", "--out-dir", s(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("data.csv")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_outputs_and_exit_code_tracks_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 60);
    let out = dir.path().join("fit");
    let o = tcmix(&[
        "fit", "--input", s(&data), "--g", "3", "--omega", "6,10,16", "--starts", "2",
        "--max-iter", "3", "--out-dir", s(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("fit.json"));
    assert_eq!(report["converged"], false);
    assert_eq!(report["stop_reason"], "max_iter");
    assert_eq!(report["components"].as_array().unwrap().len(), 3);
    assert_eq!(report["run"]["command"], "fit");
    let assignments = fs::read_to_string(out.join("assignments.csv")).unwrap();
    assert!(assignments.starts_with("gene,cluster\n"));
    assert_eq!(assignments.lines().count(), 61);
    let means = fs::read_to_string(out.join("cluster_means.csv")).unwrap();
    assert!(means.starts_with("time,cluster,fitted,observed\n"));
}

#[test]
fn kim_report_omits_absent_variances() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 60);
    let o = tcmix(&[
        "fit", "--input", s(&data), "--model", "kim", "--g", "3", "--omega", "6,10,16",
        "--starts", "2", "--out-dir", s(dir.path()),
    ]);
    let report = json(&dir.path().join("fit.json"));
    let expected = if report["converged"] == true { 0 } else { 2 };
    assert_eq!(code(&o), expected);
    for c in report["components"].as_array().unwrap() {
        assert!(c.get("sigma2").is_none() && c.get("d2").is_none());
        assert!(c.get("theta2").is_some() && c.get("rho").is_some());
    }
}

#[test]
fn missing_input_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = tcmix(&["fit", "--input", "/no/such/file.csv", "--omega", "24", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot open"));
    assert!(!out.exists());
}

#[test]
fn evaluate_scores_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    fs::write(&a, "1\n1\n2\n").unwrap();
    fs::write(&b, "gene,cluster\nx,1\ny,2\nz,2\n").unwrap();
    let same = tcmix(&["evaluate", "--pred", s(&a), "--truth", s(&a)]);
    let v: Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!((v["error"].as_f64(), v["rand"].as_f64(), v["adjusted"].as_f64()), (Some(0.0), Some(1.0), Some(1.0)));
    let diff = tcmix(&["evaluate", "--pred", s(&a), "--truth", s(&b)]);
    assert_eq!(code(&diff), 0);
    let v: Value = serde_json::from_slice(&diff.stdout).unwrap();
    assert!((v["rand"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!((v["error"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn simulate_runs_a_small_study() {
    let dir = tempfile::tempdir().unwrap();
    let o = tcmix(&[
        "simulate", "--preset", "table3", "--reps", "2", "--n-genes", "60", "--max-iter", "50",
        "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["replicates"], 2);
    assert!(report["design"]["components"].as_array().unwrap().iter().all(|c| c["d2"] == 0.0));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("emwire,p,1,")));

    let bad = tcmix(&["simulate", "--preset", "table1", "--reps", "0", "--out-dir", s(&dir.path().join("x"))]);
    assert_eq!(code(&bad), 1);
    let unknown = tcmix(&["simulate", "--preset", "nope"]);
    assert_eq!(code(&unknown), 1);
}

#[test]
fn singleton_grid_matches_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 60);
    let fit_dir = dir.path().join("fit");
    let grid_dir = dir.path().join("grid");
    let common = ["--input", s(&data), "--g", "3", "--starts", "2", "--max-iter", "80", "--seed", "9"];
    let mut fit_args = vec!["fit", "--omega", "6,10,16", "--out-dir", s(&fit_dir)];
    fit_args.extend(common);
    let mut grid_args = vec!["gridsearch", "--grid", "6", "--grid", "10", "--grid", "16", "--out-dir", s(&grid_dir)];
    grid_args.extend(common);
    let a = tcmix(&fit_args);
    let b = tcmix(&grid_args);
    assert_eq!(code(&a), code(&b), "{}", String::from_utf8_lossy(&b.stderr));
    let (fa, fb) = (json(&fit_dir.join("fit.json")), json(&grid_dir.join("fit.json")));
    assert_eq!(fa["loglik"], fb["loglik"]);
    assert_eq!(fa["assignments"], fb["assignments"]);
    let scores = fs::read_to_string(grid_dir.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 2);
}

#[test]
fn oversize_grid_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let o = tcmix(&[
        "gridsearch", "--input", "/no/such/file.csv", "--g", "3", "--grid", "1:30", "--per-component",
        "--out-dir", s(&out),
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("27000") && err.contains("cap"), "{err}");
    assert!(!out.exists());
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 40);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "max_iter = 2\nseed = 17\nmodel = \"qin\"\n").unwrap();
    let o = tcmix(&[
        "fit", "--input", s(&data), "--g", "2", "--omega", "8", "--starts", "1", "--max-iter", "500",
        "--config", s(&cfg), "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("fit.json"));
    assert_eq!(report["iterations"], 2);
    assert_eq!(report["seed"], 17);
    assert_eq!(report["model"], "qin");

    fs::write(&cfg, "bogus = 1\n").unwrap();
    let o = tcmix(&["fit", "--input", s(&data), "--omega", "8", "--config", s(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown config key 'bogus'"));
}
