//! Synthetic data: the Ackley benchmark with heteroscedastic noise and an AR(1) series.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::tabular::{FeatureKind, TabularDataset};
use crate::error::{Error, Result};
use crate::models::Task;
use crate::numcore::{Rng, Tensor};
use crate::trainer::Targets;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AckleyConfig {
    pub n: usize,
    pub d: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Inputs are uniform on `[−half_width, half_width]^d`.
    pub half_width: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub task: Task,
}

impl Default for AckleyConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 10,
            a: 20.0,
            b: 0.2,
            c: 2.0 * PI,
            half_width: 2.0,
            sigma_min: 0.1,
            sigma_max: 1.0,
            task: Task::Regression,
        }
    }
}

impl AckleyConfig {
    pub fn value(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
        let cs = x.iter().map(|v| (self.c * v).cos()).sum::<f64>() / d;
        -self.a * (-self.b * sq.sqrt()).exp() - cs.exp() + self.a
    }

    /// `σ_min + (σ_max − σ_min)·‖x‖ / r_max` with `r_max` the cube's corner radius.
    pub fn sigma(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r_max = self.half_width * (x.len() as f64).sqrt();
        self.sigma_min + (self.sigma_max - self.sigma_min) * r / r_max
    }
}

/// Draws `n` inputs and noisy targets `f(x) + σ(x)·ε`. For classification
/// the noise is added to the score `f(x) − median(f)` (median over the
/// sampled noiseless values) and the label is `1[score > 0]`.
pub fn gen_ackley(cfg: &AckleyConfig, rng: &mut Rng) -> Result<TabularDataset> {
    if cfg.n == 0 || cfg.d == 0 {
        return Err(Error::Parameter("Ackley needs n ≥ 1 and d ≥ 1".into()));
    }
    if cfg.task == Task::Timeseries {
        return Err(Error::Config("Ackley data is tabular".into()));
    }
    let mut x = Vec::with_capacity(cfg.n * cfg.d);
    let mut f = Vec::with_capacity(cfg.n);
    let mut noise = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let row: Vec<f64> = (0..cfg.d)
            .map(|_| rng.uniform_range(-cfg.half_width, cfg.half_width))
            .collect();
        f.push(cfg.value(&row));
        noise.push(cfg.sigma(&row) * rng.normal());
        x.extend(row);
    }
    let (targets, classes) = match cfg.task {
        Task::Classification => {
            let mut sorted = f.clone();
            sorted.sort_by(f64::total_cmp);
            let m = sorted.len() / 2;
            let med = if sorted.len() % 2 == 1 { sorted[m] } else { 0.5 * (sorted[m - 1] + sorted[m]) };
            let labels = f.iter().zip(&noise).map(|(v, e)| usize::from(v - med + e > 0.0)).collect();
            (Targets::Labels(labels), vec!["0".to_string(), "1".to_string()])
        }
        _ => (Targets::Real(f.iter().zip(&noise).map(|(v, e)| v + e).collect()), Vec::new()),
    };
    let names: Vec<String> = (0..cfg.d).map(|j| format!("x{j}")).collect();
    Ok(TabularDataset {
        task: cfg.task,
        x: Tensor::matrix(cfg.n, cfg.d, x)?,
        y: targets,
        kinds: names.iter().map(|n| FeatureKind::Numeric { column: n.clone() }).collect(),
        feature_names: names,
        classes,
    })
}

/// `x_t = φ·x_{t−1} + σ·ε_t`, started from the stationary distribution.
pub fn gen_ar1(n: usize, phi: f64, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(phi.abs() < 1.0) || !(sigma > 0.0) {
        return Err(Error::Parameter(format!("AR(1) needs |φ| < 1 and σ > 0, got φ = {phi}, σ = {sigma}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut x = sigma / (1.0 - phi * phi).sqrt() * rng.normal();
    for _ in 0..n {
        out.push(x);
        x = phi * x + sigma * rng.normal();
    }
    Ok(out)
}

/// Writes a dataset as CSV with feature columns followed by `y`.
pub fn dataset_csv(ds: &TabularDataset) -> String {
    let mut s = ds.feature_names.join(",");
    s.push_str(",y\n");
    for i in 0..ds.len() {
        let row: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        match &ds.y {
            Targets::Real(v) => s.push_str(&format!(",{}\n", v[i])),
            Targets::Labels(v) => s.push_str(&format!(",{}\n", v[i])),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn ackley_at_origin() {
        let cfg = AckleyConfig::default();
        assert!((cfg.value(&[0.0; 10]) + E).abs() < 1e-12);
        assert!((cfg.value(&[0.0; 10]) + 2.7183).abs() < 1e-4);
        assert_eq!(cfg.sigma(&[0.0; 10]), cfg.sigma_min);
        assert!((cfg.sigma(&[2.0; 10]) - cfg.sigma_max).abs() < 1e-12);
    }

    #[test]
    fn classification_is_balanced() {
        let cfg = AckleyConfig {
            n: 1001,
            sigma_min: 0.0,
            sigma_max: 0.0,
            task: Task::Classification,
            ..AckleyConfig::default()
        };
        let ds = gen_ackley(&cfg, &mut Rng::new(0)).unwrap();
        let Targets::Labels(l) = &ds.y else { panic!() };
        assert_eq!(l.iter().sum::<usize>(), 500);
    }

    #[test]
    fn ar1_is_reproducible_and_stationary() {
        let a = gen_ar1(20_000, 0.8, 1.0, &mut Rng::new(3)).unwrap();
        assert_eq!(a, gen_ar1(20_000, 0.8, 1.0, &mut Rng::new(3)).unwrap());
        let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        assert!((var - 1.0 / 0.36).abs() < 0.3);
    }
}
