use std::path::PathBuf;

use grube::data::tabular::{load_manifest, prepare, random_split, FeatureKind};
use grube::data::{load_series_csv, make_shift_split};
use grube::models::Task;
use grube::trainer::Targets;
use grube::Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn housing_fixture_encodes_categories_and_imputes() {
    let (m, ds) = load_manifest(fixture("housing.toml")).unwrap();
    assert_eq!(m.task, Task::Regression);
    assert_eq!(ds.len(), 400);
    assert_eq!(ds.numeric_features().len(), 6);
    let cats: Vec<&str> = ds
        .kinds
        .iter()
        .filter_map(|k| match k {
            FeatureKind::Category { value, .. } => Some(value.as_str()),
            _ => None,
        })
        .collect();
    assert!(cats.contains(&"<missing>"), "{cats:?}");
    assert_eq!(cats.len(), 5);
    assert!(ds.x.all_finite());
    for i in 0..ds.len() {
        let onehot: f64 = (6..ds.dim()).map(|j| ds.x.get(i, j)).sum();
        assert_eq!(onehot, 1.0);
    }
}

#[test]
fn income_fixture_has_two_classes() {
    let (_, ds) = load_manifest(fixture("income.toml")).unwrap();
    assert_eq!(ds.classes, vec!["<=50K".to_string(), ">50K".to_string()]);
    let Targets::Labels(l) = &ds.y else { panic!() };
    assert!(l.iter().any(|&v| v == 1) && l.iter().any(|&v| v == 0));
    let split = random_split(ds.len(), 0.2, &mut Rng::new(0)).unwrap();
    let p = prepare(&ds, &split).unwrap();
    assert_eq!(p.test_x.rows(), 80);
    assert!(p.y_scaler.is_none());
    for i in 0..p.train_x.rows() {
        assert!(p.train_x.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn shift_split_on_fixture_keeps_tails_out_of_train() {
    let (_, ds) = load_manifest(fixture("housing.toml")).unwrap();
    let (split, rep) = make_shift_split(&ds, 0.025, 2, &mut Rng::new(3)).unwrap();
    assert_eq!(split.train.len() + split.test.len(), ds.len());
    assert_eq!(rep.test_id.len() + rep.test_shift.len(), split.test.len());
    assert!(rep.n_shifted > 0);
    for &i in &split.train {
        for (&j, [lo, hi]) in rep.spec.selected.iter().zip(&rep.bounds) {
            assert!((*lo..=*hi).contains(&ds.x.get(i, j)));
        }
    }
    // Income drives the target, so it should rank first.
    assert!(rep.feature_names.contains(&"median_income".to_string()), "{:?}", rep.feature_names);
}

#[test]
fn series_fixture_loads_named_column() {
    let v = load_series_csv(fixture("series.csv"), Some("load")).unwrap();
    assert_eq!(v.len(), 600);
    assert!(load_series_csv(fixture("series.csv"), Some("missing")).is_err());
}
