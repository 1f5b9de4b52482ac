//! Exit codes and outputs of the command-line front end.

use std::path::Path;
use std::process::{Command, Output};

fn pcgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcgeo")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let out = dir.join("out");
    let text = format!(
        r#"{{
  "scenario": {{"name": "anisotropic", "seed": 2}},
  "seeds": [0, 1],
  "methods": ["vsgd", "pcg"],
  "baseline": {{"steps": 30}},
  "phase1": {{"steps": 10}},
  "phase2": {{"steps": 60}},
  "sweep_seeds": [],
  "output_dir": {:?}{extra}
}}"#,
        out.to_str().unwrap()
    );
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn successful_run_exits_zero_and_report_rebuilds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = pcgeo(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("vsgd") && stdout.contains("pcg"), "{stdout}");
    let run_dir = dir.path().join("out");
    assert!(run_dir.join("metrics.csv").exists());
    let again = pcgeo(&["report", run_dir.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
}

#[test]
fn diverged_cells_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#", "learning_rates": {"pcg": 1e12}"#);
    let out = pcgeo(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/metrics.csv").exists());
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(pcgeo(&["run", missing.to_str().unwrap()]).status.code(), Some(1));
    let cfg = write_config(dir.path(), r#", "bogus": 1"#);
    let out = pcgeo(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert_eq!(pcgeo(&["report", dir.path().to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn oracle_prints_the_quarter_great_circle() {
    let out = pcgeo(&["oracle", "sphere", "1.5707963267948966,0", "1.5707963267948966,1.5707963267948966", "--no-refine"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let length = v["length"].as_f64().unwrap();
    assert!((length - std::f64::consts::FRAC_PI_2).abs() < 0.01 * std::f64::consts::FRAC_PI_2, "{length}");
}

#[test]
fn oracle_rejects_bad_points() {
    assert_eq!(pcgeo(&["oracle", "sphere", "1,x", "1,1"]).status.code(), Some(1));
    assert_eq!(pcgeo(&["oracle", "anisotropic", "0,0,0", "1,1"]).status.code(), Some(1));
}
