use grube::data::tabular::MinMaxScaler;
use grube::losses::aggregate_gaussian;
use grube::metrics::{
    coverage_curve, decompose_classification, decompose_regression, ece, rmsce_and_area, selection_size,
    selective_curve, CoverageGrid, ECE_BINS,
};
use grube::models::{Method, Model, ModelConfig, Task};
use grube::trainer::{train, Targets, TrainConfig, TrainSet};
use grube::{Rng, Tensor};
use proptest::prelude::*;

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixture_variance_dominates_mean_member_variance(
        members in prop::collection::vec((-5.0f64..5.0, 0.01f64..4.0), 1..12)
    ) {
        let (mu, var): (Vec<f64>, Vec<f64>) = members.into_iter().unzip();
        let (m, v) = aggregate_gaussian(&mu, &var);
        let mean_var = var.iter().sum::<f64>() / var.len() as f64;
        prop_assert!(v >= mean_var - 1e-12);
        prop_assert!(m >= mu.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12);
        prop_assert!(m <= mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12);
        let d = decompose_regression(&mu, &var);
        prop_assert!((d.total - d.aleatoric - d.epistemic).abs() <= 1e-12 * (1.0 + d.total));
        prop_assert!(d.epistemic >= 0.0);
    }

    #[test]
    fn identical_members_have_no_epistemic_part(mu in -5.0f64..5.0, var in 0.01f64..4.0, k in 1usize..10) {
        let d = decompose_regression(&vec![mu; k], &vec![var; k]);
        prop_assert!(d.epistemic.abs() < 1e-24);
        prop_assert!((d.total - var).abs() < 1e-12);
    }

    #[test]
    fn classification_decomposition_is_bounded(
        raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..8)
    ) {
        let rows: Vec<Vec<f64>> = raw.iter().map(|r| simplex(r)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let d = decompose_classification(&refs);
        prop_assert!(d.epistemic >= 0.0);
        prop_assert!(d.total <= 3f64.ln() + 1e-12);
        prop_assert!((d.total - d.aleatoric - d.epistemic).abs() < 1e-12);
    }

    #[test]
    fn selection_size_is_bounded_and_monotone(n in 1usize..5000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (selection_size(lo, n), selection_size(hi, n));
        prop_assert!((1..=n).contains(&s_lo));
        prop_assert!(s_lo <= s_hi);
        prop_assert_eq!(selection_size(1.0, n), n);
    }

    #[test]
    fn selective_keeps_least_uncertain(u in prop::collection::vec(0.0f64..1.0, 2..60), gamma in 0.05f64..1.0) {
        let pts = selective_curve(&u, &[gamma], |idx| {
            idx.iter().map(|&i| u[i]).fold(0.0, f64::max)
        }).unwrap();
        let kept = pts[0].kept;
        let mut sorted = u.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(pts[0].value, sorted[kept - 1]);
    }

    #[test]
    fn coverage_and_ece_lie_in_unit_interval(seed in 0u64..500, n in 10usize..200) {
        let mut rng = Rng::new(seed);
        let mean: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let var: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
        let y: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
        let grid = CoverageGrid::default();
        let emp = coverage_curve(&mean, &var, &y, &grid).unwrap();
        prop_assert!(emp.iter().all(|c| (0.0..=1.0).contains(c)));
        prop_assert!(emp.windows(2).all(|w| w[0] <= w[1]));
        let (rmsce, area) = rmsce_and_area(&emp, &grid).unwrap();
        prop_assert!((0.0..=1.0).contains(&rmsce) && (0.0..=1.0).contains(&area));
        let probs: Vec<f64> = (0..n).flat_map(|_| { let p = rng.uniform(); [p, 1.0 - p] }).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let e = ece(&probs, 2, &labels, ECE_BINS).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn scaling_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..30)) {
        let n = rows.len();
        let x = Tensor::matrix(n, 3, rows.concat()).unwrap();
        let s = MinMaxScaler::fit(&x).unwrap();
        let back = s.inverse(&s.transform(&x).unwrap()).unwrap();
        for j in 0..3 {
            if s.max[j] > s.min[j] {
                for i in 0..n {
                    prop_assert!((back.get(i, j) - x.get(i, j)).abs() <= 1e-12 * (1.0 + x.get(i, j).abs()) * 1e3);
                }
            }
        }
    }

    #[test]
    fn param_count_formula_matches_tensors(
        p in 1usize..20, h1 in 1usize..16, h2 in 1usize..16, k in 1usize..6, method in 0usize..4, cls in 0usize..2
    ) {
        let task = if cls == 0 { Task::Regression } else { Task::Classification };
        let mut c = ModelConfig::new(task, p, Method::ALL[method]);
        c.hidden_dims = vec![h1, h2];
        c.ensemble_size = k;
        let m = Model::build(&c, &Rng::new(0)).unwrap();
        prop_assert_eq!(m.param_count(), m.formula_param_count());
    }
}

#[test]
fn training_nll_decreases_on_linear_toy() {
    // y = 2x + noise with a heteroscedastic head; the first 10 epochs should
    // lower the training loss monotonically in at least 4 of 5 seeds.
    let mut rng = Rng::new(21);
    let n = 256;
    let x: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.1 * rng.normal()).collect();
    let xt = Tensor::matrix(n, 1, x).unwrap();
    let yt = Targets::Real(y);
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: n,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let mut decreasing = 0;
    for seed in 0..5 {
        for method in [Method::Single, Method::BatchEnsemble] {
            let mut model = Model::build(&ModelConfig::new(Task::Regression, 1, method), &Rng::new(seed)).unwrap();
            let rep = train(&mut model, &TrainSet::Tabular { x: &xt, y: &yt }, &cfg, &Rng::new(seed + 100)).unwrap();
            let losses: Vec<f64> = rep.trace.iter().map(|e| e.loss).collect();
            if method == Method::BatchEnsemble && losses.windows(2).all(|w| w[1] < w[0]) {
                decreasing += 1;
            }
            assert!(losses.last().unwrap() < losses.first().unwrap(), "{method} seed {seed}: {losses:?}");
        }
    }
    assert!(decreasing >= 4, "{decreasing}/5");
}
