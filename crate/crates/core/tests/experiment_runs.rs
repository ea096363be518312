use std::path::{Path, PathBuf};

use grube::data::synth::AckleyConfig;
use grube::experiment::{
    evaluate_run, forecast_run, report, run_ablation, run_experiment, DatasetRef, ExperimentConfig, RunSummary,
    SeedMetrics, Suite,
};
use grube::forecast::ForecastConfig;
use grube::layers::{AdapterMask, InitScheme};
use grube::models::{Method, ModelConfig, Task};
use grube::trainer::TrainConfig;
use grube::Error;

fn ackley(dir: &Path, method: Method, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetRef::Ackley(AckleyConfig {
            n: 250,
            ..AckleyConfig::default()
        }),
        model: ModelConfig::new(Task::Regression, 0, method),
        train: TrainConfig {
            epochs: 4,
            seeds,
            ..TrainConfig::default()
        },
        forecast: ForecastConfig::default(),
        shift: false,
        shift_q: 0.025,
        shift_features: 2,
        data_seed: 0,
        max_test_windows: None,
        workers: 2,
        output_dir: dir.to_path_buf(),
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn single_seed_run_writes_complete_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&ackley(dir.path(), Method::BatchEnsemble, vec![0])).unwrap();
    for f in [
        "config.json",
        "metrics_seed_0.json",
        "summary.csv",
        "summary.json",
        "calibration.svg",
        "selective.svg",
        "losses.csv",
        "model_seed_0.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let m: SeedMetrics = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics_seed_0.json")).unwrap()).unwrap();
    let r = &m.groups["test"];
    let names: Vec<&str> = r.scalars().iter().map(|(n, _)| *n).collect();
    for want in ["rmse", "nll", "rmsce", "miscalibration_area"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    assert!(r.all_finite());
    assert_eq!(r.coverage.len(), 39);
    assert_eq!(m.param_count, out.summary.param_count);
    let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 4);
    let svg = std::fs::read_to_string(dir.path().join("selective.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("stroke-dasharray=\"2,3\""));
}

#[test]
fn k1_batch_ensemble_matches_single_model() {
    let dir = tempfile::tempdir().unwrap();
    let single = run_experiment(&ackley(&dir.path().join("single"), Method::Single, vec![1])).unwrap();
    let mut cfg = ackley(&dir.path().join("be"), Method::BatchEnsemble, vec![1]);
    cfg.model.ensemble_size = 1;
    cfg.model.adapter_mask = AdapterMask { r: false, s: false, b: true };
    cfg.model.init_scheme = InitScheme::Neutral;
    let be = run_experiment(&cfg).unwrap();
    let a = single.seeds[0].metrics.groups["test"].rmse.unwrap();
    let b = be.seeds[0].metrics.groups["test"].rmse.unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

#[test]
fn summary_standard_errors_match_per_seed_values() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&ackley(dir.path(), Method::Single, (0..5).collect())).unwrap();
    let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let per_seed: Vec<f64> = (0..5)
        .map(|s| {
            let m: SeedMetrics =
                serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("metrics_seed_{s}.json"))).unwrap())
                    .unwrap();
            m.groups["test"].rmse.unwrap()
        })
        .collect();
    let mean = per_seed.iter().sum::<f64>() / 5.0;
    let sd = (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    let got = &summary.groups["test"]["rmse"];
    assert!((got.mean - mean).abs() < 1e-12);
    assert!((got.se - sd / 5f64.sqrt()).abs() < 1e-12);
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("test,rmse,")));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        run_experiment(&ackley(&dir.path().join(run), Method::DeepEnsemble, vec![2, 3])).unwrap();
    }
    for f in ["metrics_seed_2.json", "metrics_seed_3.json", "summary.json", "summary.csv", "losses.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn checkpoint_reevaluation_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&ackley(dir.path(), Method::McDropout, vec![4])).unwrap();
    let again = evaluate_run(dir.path(), 4).unwrap();
    assert_eq!(again, out.seeds[0].metrics);
}

#[test]
fn shift_run_reports_id_and_shift_groups_and_delta() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ackley(&dir.path().join("shift"), Method::BatchEnsemble, vec![0, 1]);
    cfg.dataset = DatasetRef::Manifest {
        path: fixture("housing.toml"),
    };
    cfg.shift = true;
    let out = run_experiment(&cfg).unwrap();
    assert!(out.summary.groups.contains_key("id") && out.summary.groups.contains_key("shift"));
    let plain = run_experiment(&ackley(&dir.path().join("plain"), Method::Single, vec![0])).unwrap();
    let rep = report(&[dir.path().join("shift"), dir.path().join("plain"), dir.path().join("nope")]).unwrap();
    assert_eq!(rep.missing.len(), 1);
    assert_eq!(rep.warnings.len(), 1, "seed counts 2 vs 1 should warn");
    let row = rep.rows.iter().find(|r| r.run.ends_with("shift") && r.metric == "nll").unwrap();
    let want = out.summary.groups["shift"]["nll"].mean - out.summary.groups["id"]["nll"].mean;
    assert_eq!(row.delta, Some(want));
    let plain_row = rep.rows.iter().find(|r| r.run.ends_with("plain") && r.metric == "rmse").unwrap();
    assert_eq!(plain_row.delta, None);
    assert_eq!(plain_row.groups["test"].0, plain.summary.groups["test"]["rmse"].mean);
    assert!(rep.to_markdown().contains("Δ"));
    assert!(rep.to_csv().lines().count() > 1);
}

#[test]
fn classification_and_series_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ackley(&dir.path().join("clf"), Method::BatchEnsemble, vec![0]);
    cfg.dataset = DatasetRef::Manifest {
        path: fixture("income.toml"),
    };
    cfg.model.task = Task::Classification;
    let out = run_experiment(&cfg).unwrap();
    let r = &out.seeds[0].metrics.groups["test"];
    assert!(r.accuracy.is_some() && r.brier.is_some() && r.ece.is_some());
    assert_eq!(r.reliability.len(), 15);

    let mut cfg = ackley(&dir.path().join("ts"), Method::BatchEnsemble, vec![0]);
    cfg.dataset = DatasetRef::SeriesCsv {
        path: fixture("series.csv"),
        column: Some("load".into()),
        train_fraction: 0.8,
    };
    cfg.model = ModelConfig::new(Task::Timeseries, 0, Method::BatchEnsemble);
    cfg.forecast.total_paths = 100;
    cfg.max_test_windows = Some(5);
    let out = run_experiment(&cfg).unwrap();
    let r = &out.seeds[0].metrics.groups["test"];
    assert_eq!(r.n, 5);
    assert!(r.all_finite());
    let f = forecast_run(&dir.path().join("ts"), 0, None, None, true).unwrap();
    assert_eq!(f.mean.len(), 5);
    // Forecasts come back in the series' own units (around 10).
    assert!(f.mean.iter().all(|m| (0.0..20.0).contains(m)), "{:?}", f.mean);
}

#[test]
fn ablation_suites_enumerate_variants_and_check_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let base = ackley(dir.path(), Method::BatchEnsemble, vec![0]);
    let mut base = base;
    base.train.epochs = 1;
    let rows = run_ablation(Suite::Adapters, &base).unwrap();
    assert_eq!(rows.len(), 8);
    for a in &rows {
        for b in &rows {
            if a.enabled < b.enabled {
                assert!(a.param_count < b.param_count);
            }
        }
    }
    assert!(dir.path().join("ablation.csv").exists() && dir.path().join("ablation.md").exists());
    assert!(matches!(run_ablation(Suite::Gates, &base), Err(Error::Config(_))));
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ackley(dir.path(), Method::Single, vec![0]);
    cfg.model.task = Task::Timeseries;
    assert_eq!(run_experiment(&cfg).err().unwrap().exit_code(), 1);
    let mut cfg = ackley(dir.path(), Method::Single, vec![0]);
    cfg.dataset = DatasetRef::Manifest {
        path: dir.path().join("absent.toml"),
    };
    assert!(run_experiment(&cfg).is_err());
}
