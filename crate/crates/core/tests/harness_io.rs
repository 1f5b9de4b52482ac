//! Result bundles: file layout, golden metrics, summaries and failure isolation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pcgeo::counterfactual::RunStatus;
use pcgeo::harness::{
    read_metrics_csv, rebuild_report, run_experiment, AblationConfig, ExperimentConfig, LambdaSchedule, MetricRow, MetricSummary, SensitivityConfig, Summary,
    METRICS_CSV_COLUMNS, METRIC_NAMES,
};
use pcgeo::synth::ScenarioSpec;

const GOLDEN: &str = "tests/golden/mini_metrics.csv";

fn mini(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ScenarioSpec::new("anisotropic", 2), vec![0, 1], vec!["revise".into(), "vsgd".into()], dir.to_path_buf());
    cfg.baseline.steps = 40;
    cfg.sweep_seeds = Vec::new();
    cfg.threads = Some(2);
    cfg.learning_rates.insert("revise".into(), 1e-2);
    cfg.learning_rates.insert("vsgd".into(), 1e-2);
    cfg
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN)
}

fn key(r: &MetricRow) -> (u64, String, String) {
    (r.seed, r.method.clone(), r.metric.clone())
}

#[test]
fn miniature_run_matches_the_golden_metrics() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&mini(dir.path())).unwrap();
    let produced = dir.path().join("metrics.csv");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        fs::copy(&produced, golden_path()).unwrap();
    }
    let got = read_metrics_csv(&produced).unwrap();
    let want = read_metrics_csv(&golden_path()).unwrap();
    assert_eq!(got.iter().map(key).collect::<Vec<_>>(), want.iter().map(key).collect::<Vec<_>>());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.status, w.status, "{:?}", key(g));
        match (g.value, w.value) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300), "{:?}: {a} vs {b}", key(g)),
            (a, b) => assert_eq!(a, b, "{:?}", key(g)),
        }
    }
}

#[test]
fn bundle_layout_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&mini(dir.path())).unwrap();
    assert_eq!(out.cells, 4);
    assert!(out.fully_succeeded());
    for f in ["config.json", "selection.json", "metrics.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    for m in ["revise", "vsgd"] {
        for s in [0, 1] {
            assert!(dir.path().join(format!("reports/{m}/seed_{s}.json")).exists());
        }
    }
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_CSV_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 1 + 4 * METRIC_NAMES.len());
}

#[test]
fn summary_is_recomputable_from_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&mini(dir.path())).unwrap();
    let rows = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let mut grouped: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        if let Some(v) = r.value {
            grouped.entry((r.method.clone(), r.metric.clone())).or_default().push(v);
        }
    }
    for ((method, metric), v) in grouped {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        let s: &MetricSummary = &summary.methods[&method].metrics[&metric];
        assert!((s.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{method}/{metric}");
        assert!((s.std - std).abs() <= 1e-12 * std.abs().max(1.0), "{method}/{metric}");
        assert_eq!(s.n, v.len());
    }
}

#[test]
fn diverging_cells_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini(dir.path());
    cfg.methods = vec!["pcg".into(), "vsgd".into()];
    cfg.phase2.steps = 60;
    cfg.phase1.steps = 10;
    cfg.learning_rates.insert("pcg".into(), 1e12);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.diverged, 2);
    assert!(!out.fully_succeeded());
    let rows = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
    for r in &rows {
        if r.method == "pcg" {
            assert_eq!(r.status, RunStatus::Diverged);
            assert!(r.value.is_none(), "{r:?}");
        } else {
            assert_eq!(r.status, RunStatus::Ok);
        }
    }
    let s = &out.summary.methods["pcg"];
    assert_eq!((s.runs, s.ok, s.diverged, s.retention_rate), (2, 0, 2, 0.0));
    assert_eq!(out.summary.methods["vsgd"].ok, 2);
}

#[test]
fn rebuilding_reproduces_the_tables_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini(dir.path());
    cfg.ablation = Some(AblationConfig {
        schedules: vec![LambdaSchedule {
            lambda0: 0.1,
            lambda_factor: 2.0,
            lambda_period: 10,
        }],
        seeds: Some(vec![0]),
    });
    cfg.methods.push("pcg".into());
    cfg.phase1.steps = 20;
    cfg.phase2.steps = 60;
    cfg.learning_rates.insert("pcg".into(), 1e-3);
    cfg.sensitivity = Some(SensitivityConfig {
        seeds: vec![0],
        inits: 3,
        baseline_pairs: 5,
        methods: vec!["vsgd".into()],
    });
    run_experiment(&cfg).unwrap();
    for f in ["ablation.csv", "sensitivity.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let metrics = fs::read(dir.path().join("metrics.csv")).unwrap();
    let summary = fs::read(dir.path().join("summary.json")).unwrap();
    fs::remove_file(dir.path().join("metrics.csv")).unwrap();
    rebuild_report(dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("metrics.csv")).unwrap(), metrics);
    assert_eq!(fs::read(dir.path().join("summary.json")).unwrap(), summary);
}

#[test]
fn rebuild_requires_every_report() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&mini(dir.path())).unwrap();
    fs::remove_file(dir.path().join("reports/vsgd/seed_1.json")).unwrap();
    assert!(rebuild_report(dir.path()).is_err());
}
