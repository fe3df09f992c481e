use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tsld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsld")).args(args).output().unwrap()
}

fn config(dir: &Path, horizon: usize) -> PathBuf {
    let path = dir.join("small.json");
    let text = format!(
        r#"{{
  "system": {{ "preset": "ref-3x3" }},
  "noise": {{ "kind": "mixture", "offset": 0.5 }},
  "admissible": {{ "s": 20, "rho": 0.99, "m_j": 20000 }},
  "prior_mean": 0.5,
  "horizon": {horizon},
  "seeds": [0, 1]
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn selftest_exits_cleanly() {
    let out = tsld(&["selftest"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn bad_config_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ not json").unwrap();
    let out = tsld(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let out = tsld(&["riccati-check", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn riccati_check_reports_the_closed_loop_radius() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsld(&["riccati-check", config(dir.path(), 10).to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("spectral radius")).unwrap();
    let rho: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((rho - 0.3365).abs() <= 5e-4, "{rho}");
    assert!(text.contains("in admissible   true"));
}

#[test]
fn run_writes_csvs_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = tsld(&[
        "run",
        config(dir.path(), 30).to_str().unwrap(),
        "--seeds",
        "0..3",
        "--out",
        out_dir.to_str().unwrap(),
        "--parallel",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["seed_0.csv", "seed_1.csv", "seed_2.csv", "aggregate.csv", "episodes.csv", "failures.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    for name in ["regret.dat", "regret_sqrt_t.dat", "lambda_min.dat", "theta_err.dat", "recipe.txt"] {
        assert!(out_dir.join("plots").join(name).exists(), "{name}");
    }
    assert!(stdout(&out).contains("3 succeeded, 0 failed"));
}

#[test]
fn psrl_override_runs_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = tsld(&[
        "run",
        config(dir.path(), 20).to_str().unwrap(),
        "--algorithm",
        "psrl",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("algorithm       psrl"));
}

#[test]
fn compare_iters_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = tsld(&[
        "compare-iters",
        config(dir.path(), 10).to_str().unwrap(),
        "--horizons",
        "20,40",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].trim_start().starts_with("20"));
    assert!(out_dir.join("iterations.csv").exists());

    let out = tsld(&["compare-iters", config(dir.path(), 10).to_str().unwrap(), "--horizons", "40,20"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_seed_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsld(&["run", config(dir.path(), 10).to_str().unwrap(), "--seeds", "5..2"]);
    assert!(!out.status.success());
}
