//! Scoring rules, interval and confidence calibration, uncertainty
//! decomposition and selective-prediction curves. All logarithms are natural.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::losses::{aggregate_gaussian, PROB_FLOOR};
use crate::models::{CategoricalPredictive, GaussianPredictive};

/// Default number of confidence bins for ECE.
pub const ECE_BINS: usize = 15;

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape("labels", &[labels.len()], &[n]));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Data(format!("label {l} at row {i} outside 0..{classes}")));
    }
    Ok(())
}

fn rows(probs: &[f64], classes: usize) -> Result<usize> {
    if classes == 0 || probs.len() % classes != 0 {
        return Err(Error::shape("probabilities", &[probs.len()], &[classes]));
    }
    Ok(probs.len() / classes)
}

/// `(1/N) Σ_i Σ_c (p_ic − 1[y_i = c])²` over row-major `n×C` probabilities.
pub fn brier(probs: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    let n = rows(probs, classes)?;
    check_labels(labels, n, classes)?;
    let total: f64 = probs
        .chunks(classes)
        .zip(labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(c, p)| (p - if c == y { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Max-probability confidence and arg-max prediction per row; ties go to the lower class.
fn confidence(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > best.0 {
            best = (p, c);
        }
    }
    best
}

/// Confidence histogram on `bins` equal-width bins of `[0, 1]`; bin `m`
/// holds confidences in `(m/M, (m+1)/M]`, with 0 placed in the first bin.
pub fn reliability(probs: &[f64], classes: usize, labels: &[usize], bins: usize) -> Result<Vec<ReliabilityBin>> {
    let n = rows(probs, classes)?;
    check_labels(labels, n, classes)?;
    if bins == 0 {
        return Err(Error::Parameter("ECE needs at least one bin".into()));
    }
    let mut acc = vec![(0usize, 0.0, 0.0); bins];
    for (row, &y) in probs.chunks(classes).zip(labels) {
        let (conf, pred) = confidence(row);
        let m = ((conf * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        acc[m].0 += 1;
        acc[m].1 += f64::from(u8::from(pred == y));
        acc[m].2 += conf;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(m, (count, correct, conf))| {
            let c = count.max(1) as f64;
            ReliabilityBin {
                lower: m as f64 / bins as f64,
                upper: (m + 1) as f64 / bins as f64,
                count,
                accuracy: correct / c,
                confidence: conf / c,
            }
        })
        .collect())
}

/// `Σ_m |B_m|/N · |acc(B_m) − conf(B_m)|`; empty bins contribute 0.
pub fn ece(probs: &[f64], classes: usize, labels: &[usize], bins: usize) -> Result<f64> {
    let n = rows(probs, classes)?;
    if n == 0 {
        return Err(Error::Parameter("ECE needs at least one sample".into()));
    }
    Ok(reliability(probs, classes, labels, bins)?
        .iter()
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs())
        .sum())
}

/// Nominal central-interval levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub levels: Vec<f64>,
}

impl Default for CoverageGrid {
    fn default() -> Self {
        Self::evenly_spaced(39).expect("39 levels")
    }
}

impl CoverageGrid {
    /// `j` levels evenly spaced on `[0.025, 0.975]`; a single level sits at 0.5.
    pub fn evenly_spaced(j: usize) -> Result<Self> {
        match j {
            0 => Err(Error::Parameter("coverage grid needs at least one level".into())),
            1 => Ok(Self { levels: vec![0.5] }),
            _ => {
                let step = 0.95 / (j - 1) as f64;
                Ok(Self {
                    levels: (0..j).map(|i| 0.025 + step * i as f64).collect(),
                })
            }
        }
    }

    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        let inside = levels.iter().all(|&l| 0.0 < l && l < 1.0);
        let increasing = levels.windows(2).all(|w| w[0] < w[1]);
        if levels.is_empty() || !inside || !increasing {
            return Err(Error::Parameter(
                "coverage levels must be strictly increasing inside (0, 1)".into(),
            ));
        }
        Ok(Self { levels })
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Fraction of `y` inside `μ ± z_{(1+γ)/2}·σ` for each nominal level `γ`.
pub fn coverage_curve(mean: &[f64], var: &[f64], y: &[f64], grid: &CoverageGrid) -> Result<Vec<f64>> {
    if mean.len() != var.len() || mean.len() != y.len() {
        return Err(Error::shape("coverage_curve", &[mean.len(), var.len()], &[y.len()]));
    }
    if mean.is_empty() {
        return Err(Error::Parameter("coverage needs at least one sample".into()));
    }
    if let Some(v) = var.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Contract(format!("predictive variance must be positive, got {v}")));
    }
    // |y − μ| / σ ≤ z  ⇔  covered.
    let scores: Vec<f64> = mean
        .iter()
        .zip(var)
        .zip(y)
        .map(|((m, v), y)| (y - m).abs() / v.sqrt())
        .collect();
    let normal = standard_normal();
    Ok(grid
        .levels
        .iter()
        .map(|&g| {
            let z = normal.inverse_cdf(0.5 + g / 2.0);
            scores.iter().filter(|&&s| s <= z).count() as f64 / scores.len() as f64
        })
        .collect())
}

/// RMS deviation from the nominal levels and the trapezoid-rule area of
/// `|γ̂(γ) − γ|` across the grid span (0 for a single-level grid).
pub fn rmsce_and_area(empirical: &[f64], grid: &CoverageGrid) -> Result<(f64, f64)> {
    if empirical.len() != grid.levels.len() {
        return Err(Error::shape("rmsce", &[empirical.len()], &[grid.levels.len()]));
    }
    let dev: Vec<f64> = empirical.iter().zip(&grid.levels).map(|(e, g)| e - g).collect();
    let rmsce = (dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt();
    let area = grid
        .levels
        .windows(2)
        .zip(dev.windows(2))
        .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0].abs() + d[1].abs()))
        .sum();
    Ok((rmsce, area))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Mean member variance (aleatoric) plus variance of member means (epistemic).
pub fn decompose_regression(mu: &[f64], var: &[f64]) -> Decomposition {
    let k = mu.len() as f64;
    let mean = mu.iter().sum::<f64>() / k;
    let aleatoric = var.iter().sum::<f64>() / k;
    let epistemic = mu.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k;
    let (_, total) = aggregate_gaussian(mu, var);
    Decomposition {
        total,
        aleatoric,
        epistemic,
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Entropy of the mean (total), mean member entropy (aleatoric) and their gap.
pub fn decompose_classification(members: &[&[f64]]) -> Decomposition {
    let k = members.len() as f64;
    let c = members.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; c];
    for row in members {
        for (m, p) in mean.iter_mut().zip(*row) {
            *m += p / k;
        }
    }
    let aleatoric = members.iter().map(|r| entropy(r)).sum::<f64>() / k;
    let epistemic = (entropy(&mean) - aleatoric).max(0.0);
    Decomposition {
        total: aleatoric + epistemic,
        aleatoric,
        epistemic,
    }
}

/// Number of samples kept at coverage `γ`: `⌈γN⌉`, at least 1.
pub fn selection_size(gamma: f64, n: usize) -> usize {
    // The tolerance keeps products like 0.3·10 from rounding up past an integer.
    (((gamma * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectivePoint {
    pub coverage: f64,
    pub kept: usize,
    pub value: f64,
}

/// Evaluates `metric` on the `⌈γN⌉` least-uncertain samples for each `γ`.
/// Equal uncertainties keep index order.
pub fn selective_curve<F>(uncertainty: &[f64], gammas: &[f64], metric: F) -> Result<Vec<SelectivePoint>>
where
    F: Fn(&[usize]) -> f64,
{
    let n = uncertainty.len();
    if n == 0 {
        return Err(Error::Parameter("selective curve needs at least one sample".into()));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0 && g <= 1.0)) {
        return Err(Error::Parameter(format!("coverage {g} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    Ok(gammas
        .iter()
        .map(|&g| {
            let kept = selection_size(g, n);
            SelectivePoint {
                coverage: g,
                kept,
                value: metric(&order[..kept]),
            }
        })
        .collect())
}

/// `γ = 0.1, 0.2, …, 1.0`.
pub fn default_selective_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64).sqrt()
}

/// Mean negative log density of `y` under `N(μ, σ²)`, constant included.
pub fn gaussian_nll(mean: &[f64], var: &[f64], y: &[f64]) -> f64 {
    let n = mean.len() as f64;
    mean.iter()
        .zip(var)
        .zip(y)
        .map(|((m, v), y)| 0.5 * (2.0 * PI * v).ln() + (y - m).powi(2) / (2.0 * v))
        .sum::<f64>()
        / n
}

pub fn categorical_nll(probs: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    let n = rows(probs, classes)?;
    check_labels(labels, n, classes)?;
    Ok(probs
        .chunks(classes)
        .zip(labels)
        .map(|(r, &y)| -r[y].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / n as f64)
}

pub fn accuracy(probs: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    let n = rows(probs, classes)?;
    check_labels(labels, n, classes)?;
    let correct = probs
        .chunks(classes)
        .zip(labels)
        .filter(|(r, &y)| confidence(r).1 == y)
        .count();
    Ok(correct as f64 / n as f64)
}

/// Ranks with ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = rank;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub nominal: f64,
    pub empirical: f64,
}

/// Full evaluation of one trained model on one test set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse: Option<f64>,
    pub nll: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub brier: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ece: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmsce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub miscalibration_area: Option<f64>,
    /// Sample means of the per-input decomposition.
    pub decomposition: Decomposition,
    pub selective: Vec<SelectivePoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub coverage: Vec<CoveragePoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub reliability: Vec<ReliabilityBin>,
}

impl MetricsReport {
    /// Scalar metrics by name, in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut v = Vec::new();
        let opt = [
            ("rmse", self.rmse),
            ("nll", Some(self.nll)),
            ("brier", self.brier),
            ("ece", self.ece),
            ("accuracy", self.accuracy),
            ("rmsce", self.rmsce),
            ("miscalibration_area", self.miscalibration_area),
            ("total", Some(self.decomposition.total)),
            ("aleatoric", Some(self.decomposition.aleatoric)),
            ("epistemic", Some(self.decomposition.epistemic)),
        ];
        for (name, val) in opt {
            if let Some(x) = val {
                v.push((name, x));
            }
        }
        v
    }

    pub fn all_finite(&self) -> bool {
        self.scalars().iter().all(|(_, v)| v.is_finite())
    }
}

fn avg(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Regression metrics from a Gaussian predictive.
pub fn evaluate_regression(pred: &GaussianPredictive, y: &[f64], grid: &CoverageGrid, gammas: &[f64]) -> Result<MetricsReport> {
    if y.len() != pred.n {
        return Err(Error::shape("evaluate_regression", &[pred.n], &[y.len()]));
    }
    let decs: Vec<Decomposition> = (0..pred.n)
        .map(|i| decompose_regression(pred.member_mu(i), pred.member_var(i)))
        .collect();
    let emp = coverage_curve(&pred.mean, &pred.variance, y, grid)?;
    let (rmsce, area) = rmsce_and_area(&emp, grid)?;
    let std: Vec<f64> = pred.variance.iter().map(|v| v.sqrt()).collect();
    let selective = selective_curve(&std, gammas, |idx| {
        let p: Vec<f64> = idx.iter().map(|&i| pred.mean[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        rmse(&p, &t)
    })?;
    Ok(MetricsReport {
        n: pred.n,
        rmse: Some(rmse(&pred.mean, y)),
        nll: gaussian_nll(&pred.mean, &pred.variance, y),
        rmsce: Some(rmsce),
        miscalibration_area: Some(area),
        decomposition: mean_decomposition(&decs),
        selective,
        coverage: grid
            .levels
            .iter()
            .zip(&emp)
            .map(|(&nominal, &empirical)| CoveragePoint { nominal, empirical })
            .collect(),
        ..MetricsReport::default()
    })
}

/// Classification metrics from averaged member probabilities.
pub fn evaluate_classification(pred: &CategoricalPredictive, labels: &[usize], gammas: &[f64]) -> Result<MetricsReport> {
    let c = pred.classes;
    check_labels(labels, pred.n, c)?;
    let decs: Vec<Decomposition> = (0..pred.n)
        .map(|i| {
            let rows: Vec<&[f64]> = (0..pred.members).map(|k| pred.member_row(i, k)).collect();
            decompose_classification(&rows)
        })
        .collect();
    let u: Vec<f64> = (0..pred.n).map(|i| entropy(pred.mean_row(i))).collect();
    let selective = selective_curve(&u, gammas, |idx| {
        let hits = idx
            .iter()
            .filter(|&&i| confidence(pred.mean_row(i)).1 == labels[i])
            .count();
        hits as f64 / idx.len() as f64
    })?;
    Ok(MetricsReport {
        n: pred.n,
        nll: categorical_nll(&pred.mean_probs, c, labels)?,
        brier: Some(brier(&pred.mean_probs, c, labels)?),
        ece: Some(ece(&pred.mean_probs, c, labels, ECE_BINS)?),
        accuracy: Some(accuracy(&pred.mean_probs, c, labels)?),
        decomposition: mean_decomposition(&decs),
        selective,
        reliability: reliability(&pred.mean_probs, c, labels, ECE_BINS)?,
        ..MetricsReport::default()
    })
}

/// Forecast metrics over windows; `mean`, `var`, `within`, `between` and
/// `y` are `[window][step]`. Selection uses the mean predictive standard
/// deviation over the horizon.
pub fn evaluate_forecast(
    mean: &[Vec<f64>],
    var: &[Vec<f64>],
    within: &[Vec<f64>],
    between: &[Vec<f64>],
    y: &[Vec<f64>],
    grid: &CoverageGrid,
    gammas: &[f64],
) -> Result<MetricsReport> {
    let flat = |v: &[Vec<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
    let (m, v, t) = (flat(mean), flat(var), flat(y));
    if m.len() != t.len() || v.len() != t.len() {
        return Err(Error::shape("evaluate_forecast", &[m.len(), v.len()], &[t.len()]));
    }
    let v: Vec<f64> = v.iter().map(|&x| x.max(f64::MIN_POSITIVE)).collect();
    let emp = coverage_curve(&m, &v, &t, grid)?;
    let (rmsce, area) = rmsce_and_area(&emp, grid)?;
    let (wi, be) = (flat(within), flat(between));
    let decomposition = Decomposition {
        total: avg(&wi) + avg(&be),
        aleatoric: avg(&wi),
        epistemic: avg(&be),
    };
    let u: Vec<f64> = var.iter().map(|w| avg(&w.iter().map(|x| x.sqrt()).collect::<Vec<_>>())).collect();
    let selective = selective_curve(&u, gammas, |idx| {
        let p: Vec<f64> = idx.iter().flat_map(|&i| mean[i].iter().copied()).collect();
        let q: Vec<f64> = idx.iter().flat_map(|&i| y[i].iter().copied()).collect();
        rmse(&p, &q)
    })?;
    Ok(MetricsReport {
        n: mean.len(),
        rmse: Some(rmse(&m, &t)),
        nll: gaussian_nll(&m, &v, &t),
        rmsce: Some(rmsce),
        miscalibration_area: Some(area),
        decomposition,
        selective,
        coverage: grid
            .levels
            .iter()
            .zip(&emp)
            .map(|(&nominal, &empirical)| CoveragePoint { nominal, empirical })
            .collect(),
        ..MetricsReport::default()
    })
}

fn mean_decomposition(decs: &[Decomposition]) -> Decomposition {
    let n = decs.len() as f64;
    let aleatoric = decs.iter().map(|d| d.aleatoric).sum::<f64>() / n;
    let epistemic = decs.iter().map(|d| d.epistemic).sum::<f64>() / n;
    Decomposition {
        total: aleatoric + epistemic,
        aleatoric,
        epistemic,
    }
}

/// Mean and standard error (sample SD / √n) of per-seed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub values: Vec<f64>,
}

impl MeanSe {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self {
            mean: m,
            se,
            values,
        }
    }
}

/// Per-metric mean ± SE across seeds, keyed by metric name.
pub fn summarize(reports: &[MetricsReport]) -> BTreeMap<String, MeanSe> {
    let mut by_name: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.scalars() {
            by_name.entry(name.to_string()).or_default().push(v);
        }
    }
    by_name
        .into_iter()
        .map(|(k, v)| (k, MeanSe::from_values(v)))
        .collect()
}

/// `metric,mean,se,n` rows.
pub fn summary_csv(summary: &BTreeMap<String, MeanSe>) -> String {
    let mut s = String::from("metric,mean,se,n\n");
    for (name, m) in summary {
        s.push_str(&format!("{name},{},{},{}\n", m.mean, m.se, m.values.len()));
    }
    s
}

/// One named polyline for [`svg_plot`].
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Minimal line plot on the unit square of the data range. `diagonal` adds a
/// dashed `y = x` line; `hline` adds a dotted horizontal reference.
pub fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series<'_>], diagonal: bool, hline: Option<f64>) -> String {
    let (w, h, pad) = (480.0, 360.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.chain(hline.map(|y| (f64::NAN, y)).iter()) {
        if x.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        if y.is_finite() {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if diagonal {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if !(x1 > x0) {
        (x0, x1) = (x0.min(0.0), x0.max(0.0) + 1.0);
    }
    if !(y1 > y0) {
        (y0, y1) = (y0.min(0.0) - 0.5, y0.max(0.0) + 0.5);
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{}</text>\n",
        w / 2.0,
        escape(title),
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        w / 2.0,
        h - 12.0,
        escape(xlabel),
        h / 2.0,
        h / 2.0,
        escape(ylabel),
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"{anchor}\">{}</text>\n",
            sx(v),
            h - pad + 15.0,
            fmt_tick(v)
        ));
    }
    for v in [y0, y1] {
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            pad - 4.0,
            sy(v) + 4.0,
            fmt_tick(v)
        ));
    }
    if diagonal {
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n",
            sx(0.0),
            sy(0.0),
            sx(1.0),
            sy(1.0)
        ));
    }
    if let Some(y) = hline {
        s.push_str(&format!(
            "<line x1=\"{pad}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"2,3\"/>\n",
            sy(y),
            w - pad,
            sy(y)
        ));
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
            pad + 10.0,
            pad + 14.0 * (i as f64 + 1.0),
            escape(ser.label)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[0.0, 1.0], 2, &[1]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5, 0.5], 2, &[0]).unwrap(), 0.5);
        assert!((brier(&[0.8, 0.2], 2, &[1]).unwrap() - 1.28).abs() < 1e-12);
        assert!((brier(&[0.2, 0.8], 2, &[1]).unwrap() - 0.08).abs() < 1e-12);
        assert!(matches!(brier(&[0.5, 0.5], 2, &[3]), Err(Error::Data(_))));
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0, 0.0, 0.0, 1.0], 2, &[0, 1], 15).unwrap(), 0.0);
        assert!((ece(&[0.8, 0.2], 2, &[0], 15).unwrap() - 0.2).abs() < 1e-12);
        assert!((ece(&[0.8, 0.2, 0.8, 0.2], 2, &[0, 1], 15).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn grid_is_39_levels() {
        let g = CoverageGrid::default();
        assert_eq!(g.levels.len(), 39);
        assert!((g.levels[0] - 0.025).abs() < 1e-15);
        assert!((g.levels[38] - 0.975).abs() < 1e-12);
        assert!(g.levels.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn coverage_examples() {
        let g = CoverageGrid::default();
        let c = coverage_curve(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 2.0], &g).unwrap();
        assert!(c.iter().all(|&v| v == 1.0));
        let c = coverage_curve(&[0.0], &[1e-300], &[1.0], &g).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert!(matches!(coverage_curve(&[0.0], &[0.0], &[0.0], &g), Err(Error::Contract(_))));
    }

    #[test]
    fn rmsce_examples() {
        let g = CoverageGrid::default();
        assert_eq!(rmsce_and_area(&g.levels, &g).unwrap(), (0.0, 0.0));
        let shifted: Vec<f64> = g.levels.iter().map(|l| l + 0.1).collect();
        let (r, a) = rmsce_and_area(&shifted, &g).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        assert!((a - 0.095).abs() < 1e-12);
        let one = CoverageGrid::from_levels(vec![0.5]).unwrap();
        let (r, a) = rmsce_and_area(&[0.7], &one).unwrap();
        assert!((r - 0.2).abs() < 1e-12);
        assert_eq!(a, 0.0);
    }

    #[test]
    fn decomposition_examples() {
        let d = decompose_regression(&[0.0, 2.0], &[1.0, 1.0]);
        assert_eq!((d.aleatoric, d.epistemic, d.total), (1.0, 1.0, 2.0));
        let d = decompose_regression(&[0.4; 3], &[0.2, 0.3, 0.1]);
        assert!(d.epistemic < 1e-30);
        assert_eq!(decompose_regression(&[0.5; 4], &[1.0; 4]).epistemic, 0.0);

        let d = decompose_classification(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((d.total - 2f64.ln()).abs() < 1e-15);
        assert_eq!(d.aleatoric, 0.0);
        assert!((d.epistemic - 0.693147).abs() < 1e-6);
        let d = decompose_classification(&[&[0.25; 4], &[0.25; 4]]);
        assert!((d.aleatoric - 4f64.ln()).abs() < 1e-15);
        assert_eq!(d.epistemic, 0.0);
    }

    #[test]
    fn selective_examples() {
        let err = [0.0, 1.0, 2.0, 3.0];
        let u = [0.0, 1.0, 2.0, 3.0];
        let m = |idx: &[usize]| (idx.iter().map(|&i| err[i] * err[i]).sum::<f64>() / idx.len() as f64).sqrt();
        let c = selective_curve(&u, &[0.5, 1.0], m).unwrap();
        assert!((c[0].value - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(c[1].value, m(&[0, 1, 2, 3]));
        // Ties keep index order.
        let c = selective_curve(&[1.0; 4], &[0.25], |idx| idx[0] as f64).unwrap();
        assert_eq!(c[0].value, 0.0);
        assert_eq!(selection_size(0.3, 10), 3);
        assert_eq!(selection_size(0.01, 10), 1);
    }

    #[test]
    fn spearman_of_monotone_is_one() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 40.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_se_uses_sample_sd() {
        let m = MeanSe::from_values(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m.mean, 3.0);
        assert!((m.se - (2.5f64 / 5.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::from_values(vec![2.0]).se, 0.0);
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_plot(
            "t",
            "x",
            "y",
            &[Series {
                label: "a<b",
                points: vec![(0.1, 0.2), (0.5, 0.6)],
            }],
            true,
            Some(0.3),
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("stroke-dasharray=\"6,4\""));
        assert!(s.contains("a&lt;b"));
    }
}
