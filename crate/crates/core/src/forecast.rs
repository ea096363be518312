//! Multi-step forecasting by ancestral sampling over members and sample paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::models::{Feedback, Method, Model, Network};
use crate::numcore::{Rng, Tape, Tensor};

fn default_horizon() -> usize {
    5
}
fn default_paths() -> usize {
    2000
}
fn default_context() -> usize {
    12
}
fn default_coverages() -> Vec<f64> {
    vec![0.5, 0.8, 0.95]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Total sample paths across all members.
    #[serde(default = "default_paths")]
    pub total_paths: usize,
    #[serde(default = "default_context")]
    pub context: usize,
    /// Central interval levels written to the forecast CSV.
    #[serde(default = "default_coverages")]
    pub coverages: Vec<f64>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            total_paths: default_paths(),
            context: default_context(),
            coverages: default_coverages(),
        }
    }
}

impl ForecastConfig {
    /// `S = total / K`; the total must split evenly.
    pub fn paths_per_member(&self, members: usize) -> Result<usize> {
        if self.horizon == 0 {
            return Err(Error::Parameter("forecast horizon must be at least 1".into()));
        }
        if members == 0 || self.total_paths == 0 || self.total_paths % members != 0 {
            return Err(Error::Parameter(format!(
                "{} paths do not split evenly over {members} members",
                self.total_paths
            )));
        }
        Ok(self.total_paths / members)
    }
}

/// Sampled trajectories, indexed `[(k·S + s)·H + h]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub members: usize,
    pub per_member: usize,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl Paths {
    pub fn new(members: usize, per_member: usize, horizon: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != members * per_member * horizon {
            return Err(Error::shape(
                "paths",
                &[values.len()],
                &[members, per_member, horizon],
            ));
        }
        Ok(Self {
            members,
            per_member,
            horizon,
            values,
        })
    }

    pub fn path(&self, k: usize, s: usize) -> &[f64] {
        let start = (k * self.per_member + s) * self.horizon;
        &self.values[start..start + self.horizon]
    }

    pub fn len(&self) -> usize {
        self.members * self.per_member
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub mean: Vec<f64>,
    /// Pooled population variance over all `K·S` paths.
    pub variance: Vec<f64>,
    /// Mean within-member path variance.
    pub within: Vec<f64>,
    /// Variance of the member path means.
    pub between: Vec<f64>,
}

/// Paths per member simulated on one tape; bounds memory for large path counts.
const PATH_CHUNK: usize = 4096;

/// Samples `S` paths for one network whose rows are member-grouped (`s·K + k`);
/// returns `[k][s][h]`.
fn network_paths(
    net: &Network,
    context: &[f64],
    s: usize,
    horizon: usize,
    noise: bool,
    rng: &mut Rng,
    mut drop: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    if s <= PATH_CHUNK {
        return chunk_paths(net, context, s, horizon, noise, rng, drop);
    }
    let k = net.members;
    let mut out = vec![0.0; s * k * horizon];
    let mut start = 0;
    while start < s {
        let n = PATH_CHUNK.min(s - start);
        let block = chunk_paths(net, context, n, horizon, noise, rng, drop.as_deref_mut())?;
        for ki in 0..k {
            let src = &block[ki * n * horizon..(ki + 1) * n * horizon];
            let at = (ki * s + start) * horizon;
            out[at..at + n * horizon].copy_from_slice(src);
        }
        start += n;
    }
    Ok(out)
}

fn chunk_paths(
    net: &Network,
    context: &[f64],
    s: usize,
    horizon: usize,
    noise: bool,
    rng: &mut Rng,
    mut drop: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    let l = context.len();
    let ctx = Tensor::matrix(1, l, context.to_vec())?.repeat_rows(s)?;
    let tape = Tape::new();
    let g = net.params.bind_frozen(&tape);
    let r = net.rollout(
        &g,
        &ctx,
        horizon,
        Feedback::Sample { rng: &mut *rng, noise },
        drop.as_deref_mut(),
    )?;
    let k = net.members;
    let rows = s * k;
    let mut out = vec![0.0; rows * horizon];
    let mut put = |h: usize, vals: &[f64]| {
        for (row, &v) in vals.iter().enumerate() {
            let (si, ki) = (row / k, row % k);
            out[(ki * s + si) * horizon + h] = v;
        }
    };
    for (h, &fed) in r.fed.iter().enumerate() {
        put(h, tape.value(fed).data());
    }
    let last = horizon - 1;
    let mu = tape.value(r.mu[last]);
    let lv = tape.value(r.log_var[last]);
    let vals: Vec<f64> = mu
        .data()
        .iter()
        .zip(lv.data())
        .map(|(&m, &lv)| if noise { m + (0.5 * lv).exp() * rng.normal() } else { m })
        .collect();
    put(last, &vals);
    Ok(out)
}

/// Ancestral sampling: every path feeds its own sampled value back as the
/// next input, and member `k` only ever uses member `k`'s parameters.
///
/// With `noise = false` each path follows the deterministic mean rollout.
pub fn ancestral_paths(
    model: &Model,
    context: &[f64],
    cfg: &ForecastConfig,
    rng: &Rng,
    noise: bool,
) -> Result<Paths> {
    if model.networks.is_empty() {
        return Err(Error::State("model has no networks".into()));
    }
    if context.len() != cfg.context {
        return Err(Error::shape("ancestral_paths", &[context.len()], &[cfg.context]));
    }
    let members = model.members();
    let s = cfg.paths_per_member(members)?;
    let h = cfg.horizon;
    let values = match model.config.method {
        Method::BatchEnsemble | Method::Single => {
            let mut r = rng.fork("paths0");
            network_paths(&model.networks[0], context, s, h, noise, &mut r, None)?
        }
        Method::DeepEnsemble => {
            let blocks: Vec<Result<Vec<f64>>> = model
                .networks
                .par_iter()
                .enumerate()
                .map(|(k, net)| {
                    let mut r = rng.fork(&format!("paths{k}"));
                    network_paths(net, context, s, h, noise, &mut r, None)
                })
                .collect();
            blocks.into_iter().collect::<Result<Vec<_>>>()?.concat()
        }
        Method::McDropout => {
            let net = &model.networks[0];
            let blocks: Vec<Result<Vec<f64>>> = (0..members)
                .into_par_iter()
                .map(|k| {
                    let mut r = rng.fork(&format!("paths{k}"));
                    let mut d = rng.fork(&format!("dropout{k}"));
                    network_paths(net, context, s, h, noise, &mut r, Some(&mut d))
                })
                .collect();
            blocks.into_iter().collect::<Result<Vec<_>>>()?.concat()
        }
    };
    Paths::new(members, s, h, values)
}

/// Pooled mean and population variance per step over all `K·S` paths.
pub fn aggregate_forecast(paths: &Paths) -> Result<ForecastResult> {
    if paths.is_empty() || paths.horizon == 0 {
        return Err(Error::Parameter("no paths to aggregate".into()));
    }
    let (k, s, hz) = (paths.members, paths.per_member, paths.horizon);
    let total = (k * s) as f64;
    let mut res = ForecastResult {
        mean: vec![0.0; hz],
        variance: vec![0.0; hz],
        within: vec![0.0; hz],
        between: vec![0.0; hz],
    };
    for h in 0..hz {
        let mut member_means = Vec::with_capacity(k);
        let mut within = 0.0;
        for m in 0..k {
            let vals: Vec<f64> = (0..s).map(|i| paths.path(m, i)[h]).collect();
            let mm = vals.iter().sum::<f64>() / s as f64;
            within += vals.iter().map(|v| (v - mm).powi(2)).sum::<f64>() / s as f64;
            member_means.push(mm);
        }
        let mean = paths.values.iter().skip(h).step_by(hz).sum::<f64>() / total;
        let variance = paths
            .values
            .iter()
            .skip(h)
            .step_by(hz)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / total;
        res.mean[h] = mean;
        res.variance[h] = variance;
        res.within[h] = within / k as f64;
        res.between[h] = member_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k as f64;
    }
    Ok(res)
}

/// CSV with `step,mean,variance` and Gaussian central bounds per coverage.
pub fn forecast_csv(result: &ForecastResult, coverages: &[f64]) -> Result<String> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut s = String::from("step,mean,variance");
    for c in coverages {
        if !(0.0 < *c && *c < 1.0) {
            return Err(Error::Parameter(format!("coverage {c} outside (0, 1)")));
        }
        s.push_str(&format!(",lower_{c},upper_{c}"));
    }
    s.push('\n');
    for (h, (m, v)) in result.mean.iter().zip(&result.variance).enumerate() {
        s.push_str(&format!("{},{m},{v}", h + 1));
        for c in coverages {
            let z = normal.inverse_cdf(0.5 + c / 2.0);
            let half = z * v.sqrt();
            s.push_str(&format!(",{},{}", m - half, m + half));
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, Task};

    #[test]
    fn aggregate_examples() {
        let p = Paths::new(1, 2, 1, vec![0.0, 2.0]).unwrap();
        let r = aggregate_forecast(&p).unwrap();
        assert_eq!((r.mean[0], r.variance[0]), (1.0, 1.0));

        let p = Paths::new(3, 4, 2, vec![0.5; 24]).unwrap();
        let r = aggregate_forecast(&p).unwrap();
        assert!(r.variance.iter().all(|&v| v == 0.0));

        let p = Paths::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let r = aggregate_forecast(&p).unwrap();
        assert_eq!(r.mean, vec![1.0, 2.0, 3.0]);
        assert_eq!(r.variance, vec![0.0; 3]);
    }

    #[test]
    fn pooled_variance_is_within_plus_between() {
        let mut rng = Rng::new(8);
        let p = Paths::new(4, 25, 3, (0..300).map(|_| rng.normal() * 3.0 + 1.0).collect()).unwrap();
        let r = aggregate_forecast(&p).unwrap();
        for h in 0..3 {
            assert!((r.variance[h] - r.within[h] - r.between[h]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let cfg = ForecastConfig {
            horizon: 0,
            ..ForecastConfig::default()
        };
        assert!(matches!(cfg.paths_per_member(10), Err(Error::Parameter(_))));
        assert_eq!(ForecastConfig::default().paths_per_member(10).unwrap(), 200);
    }

    #[test]
    fn zero_noise_paths_match_mean_rollout() {
        for method in Method::ALL {
            let mut c = ModelConfig::new(Task::Timeseries, 1, method);
            c.dropout_rate = 0.0;
            let m = Model::build(&c, &Rng::new(3)).unwrap();
            let cfg = ForecastConfig {
                total_paths: 20 * c.members(),
                ..ForecastConfig::default()
            };
            let ctx: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).sin()).collect();
            let p = ancestral_paths(&m, &ctx, &cfg, &Rng::new(1), false).unwrap();
            let again = ancestral_paths(&m, &ctx, &cfg, &Rng::new(99), false).unwrap();
            assert_eq!(p, again);
            for k in 0..p.members {
                for s in 1..p.per_member {
                    assert_eq!(p.path(k, s), p.path(k, 0));
                }
            }
        }
    }

    #[test]
    fn csv_has_bounds_per_coverage() {
        let r = ForecastResult {
            mean: vec![0.0, 1.0],
            variance: vec![1.0, 4.0],
            within: vec![1.0, 4.0],
            between: vec![0.0, 0.0],
        };
        let csv = forecast_csv(&r, &[0.95]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,mean,variance,lower_0.95,upper_0.95");
        let cells: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
        assert!((cells[4] - 1.959964).abs() < 1e-5);
    }
}
