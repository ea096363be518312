use grube::metrics::{brier, coverage_curve, ece, gaussian_nll, rmsce_and_area, CoverageGrid, ECE_BINS};
use grube::Rng;

#[test]
fn brier_of_calibrated_binary_classifier_matches_expectation() {
    // For probabilities (1 − p, p) and y ~ Bernoulli(p), E[Brier] = 2p(1 − p).
    let mut rng = Rng::new(1);
    let n = 100_000;
    let mut probs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut expected = 0.0;
    for _ in 0..n {
        let p = rng.uniform();
        probs.extend([1.0 - p, p]);
        labels.push(usize::from(rng.bernoulli(p)));
        expected += 2.0 * p * (1.0 - p) / n as f64;
    }
    let b = brier(&probs, 2, &labels).unwrap();
    assert!((b - expected).abs() < 0.005, "{b} vs {expected}");
}

#[test]
fn overconfident_classifier_has_large_ece() {
    let mut rng = Rng::new(2);
    let n = 20_000;
    let mut probs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        probs.extend([0.05, 0.95]);
        labels.push(usize::from(rng.bernoulli(0.7)));
    }
    let e = ece(&probs, 2, &labels, ECE_BINS).unwrap();
    assert!((e - 0.25).abs() < 0.02, "{e}");
}

#[test]
fn nll_matches_expected_gaussian_entropy() {
    // E[NLL] for y drawn from the predictive equals ½ ln(2πeσ²).
    let mut rng = Rng::new(3);
    let n = 200_000;
    let var: f64 = 0.7;
    let mean = vec![0.0; n];
    let y: Vec<f64> = (0..n).map(|_| var.sqrt() * rng.normal()).collect();
    let nll = gaussian_nll(&mean, &vec![var; n], &y);
    let expected = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln();
    assert!((nll - expected).abs() < 0.01, "{nll} vs {expected}");
}


#[test]
fn too_narrow_intervals_undercover() {
    let mut rng = Rng::new(4);
    let n = 20_000;
    let mean = vec![0.0; n];
    let y: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
    let grid = CoverageGrid::default();
    let emp = coverage_curve(&mean, &vec![1.0; n], &y, &grid).unwrap();
    for (c, p) in emp.iter().zip(&grid.levels) {
        assert!(c < p);
    }
    let (rmsce, area) = rmsce_and_area(&emp, &grid).unwrap();
    assert!(rmsce > 0.1 && area > 0.1);
}
