//! Tail-based distribution-shift split.
//!
//! A base split is drawn first and used to rank numeric features by the
//! absolute coefficients of a linear (regression) or multinomial logistic
//! (classification) model on standardized features. The `d` top features
//! define tail regions below the `q` and above the `1 − q` quantile of the
//! remaining pool. Pool rows outside every tail form the training set; the
//! base rows and the tail rows form the test set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::tabular::{Split, TabularDataset};
use crate::error::{Error, Result};
use crate::numcore::{Rng, Tape, Tensor};
use crate::params::ParamSet;
use crate::trainer::{adam_step, AdamState, Targets, TrainConfig};

/// Fraction of all rows intended for the test set.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub q: f64,
    pub d_selected: usize,
    pub selected: Vec<usize>,
    pub p_tail: f64,
    pub base_split: f64,
}

impl ShiftSpec {
    pub fn new(q: f64, d_selected: usize) -> Result<Self> {
        if !(0.0..0.5).contains(&q) {
            return Err(Error::Parameter(format!("tail quantile q must lie in [0, 0.5), got {q}")));
        }
        let p_tail = tail_probability(q, d_selected);
        if p_tail >= TEST_FRACTION {
            return Err(Error::Parameter(format!(
                "tail probability {p_tail} leaves no room for a base split"
            )));
        }
        Ok(Self {
            q,
            d_selected,
            selected: Vec::new(),
            p_tail,
            base_split: base_split(p_tail),
        })
    }
}

/// `1 − (1 − 2q)^d`: chance that a sample with independent features lies in a tail.
pub fn tail_probability(q: f64, d: usize) -> f64 {
    1.0 - (1.0 - 2.0 * q).powi(d as i32)
}

/// `(0.2 − p_tail) / (1 − p_tail)`: base fraction that brings the expected test share to 20%.
pub fn base_split(p_tail: f64) -> f64 {
    (TEST_FRACTION - p_tail) / (1.0 - p_tail)
}

/// What the split selected and how many rows ended up where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub spec: ShiftSpec,
    pub feature_names: Vec<String>,
    /// Importance of every numeric feature, in dataset column order.
    pub importance: Vec<(String, f64)>,
    /// `[lower, upper]` quantile bounds of each selected feature.
    pub bounds: Vec<[f64; 2]>,
    pub n_base: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_shifted: usize,
    pub test_fraction: f64,
    /// Test rows inside every bound.
    pub test_id: Vec<usize>,
    /// Test rows in at least one tail.
    pub test_shift: Vec<usize>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn standardize(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    cols.iter()
        .map(|c| {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            c.iter().map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 }).collect()
        })
        .collect()
}

/// `|β_j|` of an ordinary least-squares fit with intercept.
pub fn ols_importance(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let d = cols.len();
    let x = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let beta = x
        .svd(true, true)
        .solve(&yv, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(d + 1));
    (1..=d).map(|j| beta[j].abs()).collect()
}

/// `max_c |W_jc|` of a multinomial logistic regression fitted with Adam.
pub fn logistic_importance(cols: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    let n = labels.len();
    let d = cols.len();
    let mut data = vec![0.0; n * d];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            data[i * d + j] = *v;
        }
    }
    let x = Tensor::matrix(n, d, data)?;
    let mut params = ParamSet::new();
    let w = params.add("W", Tensor::zeros(&[d, classes]));
    let b = params.add("b", Tensor::zeros(&[1, classes]));
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let mut state = AdamState::new(&params);
    for _ in 0..300 {
        let tape = Tape::new();
        let g = params.bind(&tape);
        let xv = tape.constant(x.clone());
        let logits = tape.add_tiled(tape.matmul(xv, g.var(w))?, g.var(b))?;
        let nll = crate::losses::categorical_nll_terms(&tape, logits, labels)?;
        let loss = tape.mean(nll);
        tape.backward(loss)?;
        params.zero_grad();
        params.accumulate_grads(&g)?;
        adam_step(&mut params, &mut state, &cfg)?;
    }
    let wt = params.get(w);
    Ok((0..d)
        .map(|j| (0..classes).map(|c| wt.get(j, c).abs()).fold(0.0, f64::max))
        .collect())
}

/// Builds the shift split. Fails with a config error when fewer than
/// `d_selected` (at least 2) numeric features exist.
pub fn make_shift_split(ds: &TabularDataset, q: f64, d_selected: usize, rng: &mut Rng) -> Result<(Split, ShiftReport)> {
    let numeric = ds.numeric_features();
    if numeric.len() < d_selected.max(2) {
        return Err(Error::Config(format!(
            "shift split needs at least {} numeric features, found {}",
            d_selected.max(2),
            numeric.len()
        )));
    }
    let mut spec = ShiftSpec::new(q, d_selected)?;
    let n = ds.len();
    let perm = rng.permutation(n);
    let n_base = (spec.base_split * n as f64).round() as usize;
    let (base, pool) = perm.split_at(n_base);
    if base.len() < 2 || pool.is_empty() {
        return Err(Error::Data(format!("{n} rows are too few for a shift split")));
    }

    let cols: Vec<Vec<f64>> = numeric
        .iter()
        .map(|&j| base.iter().map(|&i| ds.x.get(i, j)).collect())
        .collect();
    let z = standardize(&cols);
    let importance = match &ds.y {
        Targets::Real(y) => ols_importance(&z, &base.iter().map(|&i| y[i]).collect::<Vec<_>>()),
        Targets::Labels(y) => logistic_importance(
            &z,
            &base.iter().map(|&i| y[i]).collect::<Vec<_>>(),
            ds.num_classes().max(2),
        )?,
    };
    let mut ranked: Vec<usize> = (0..numeric.len()).collect();
    ranked.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    spec.selected = ranked[..d_selected].iter().map(|&r| numeric[r]).collect();

    let bounds: Vec<[f64; 2]> = spec
        .selected
        .iter()
        .map(|&j| {
            let mut v: Vec<f64> = pool.iter().map(|&i| ds.x.get(i, j)).collect();
            v.sort_by(f64::total_cmp);
            [quantile_sorted(&v, q), quantile_sorted(&v, 1.0 - q)]
        })
        .collect();
    let in_tail = |i: usize| {
        spec.selected
            .iter()
            .zip(&bounds)
            .any(|(&j, [lo, hi])| {
                let v = ds.x.get(i, j);
                v < *lo || v > *hi
            })
    };

    let mut train: Vec<usize> = pool.iter().copied().filter(|&i| !in_tail(i)).collect();
    let mut test: Vec<usize> = base.iter().chain(pool.iter().filter(|&&i| in_tail(i))).copied().collect();
    train.sort_unstable();
    test.sort_unstable();
    let (test_shift, test_id): (Vec<usize>, Vec<usize>) = test.iter().partition(|&&i| in_tail(i));
    let report = ShiftReport {
        feature_names: spec.selected.iter().map(|&j| ds.feature_names[j].clone()).collect(),
        importance: numeric
            .iter()
            .zip(&importance)
            .map(|(&j, &v)| (ds.feature_names[j].clone(), v))
            .collect(),
        bounds,
        n_base,
        n_train: train.len(),
        n_test: test.len(),
        n_shifted: test_shift.len(),
        test_fraction: test.len() as f64 / n as f64,
        test_id,
        test_shift,
        spec,
    };
    Ok((Split { train, test }, report))
}
