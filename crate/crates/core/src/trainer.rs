//! Adam and the training loop: shuffled mini-batches for tabular data,
//! fully autoregressive multi-step training for series.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::DropoutSpec;
use crate::losses::{categorical_nll_terms, ensemble_loss, gaussian_nll_terms, member_losses};
use crate::models::{Feedback, InputSource, Model, ModelConfig, Network, Output};
use crate::numcore::{Rng, Tape, Tensor, Var};
use crate::params::{Graph, ParamSet};

fn default_epochs() -> usize {
    500
}
fn default_lr() -> f64 {
    0.005
}
fn default_batch() -> usize {
    64
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_context() -> usize {
    12
}
fn default_horizon() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            weight_decay: 0.0,
            seeds: default_seeds(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            context: default_context(),
            horizon: default_horizon(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and ≥ 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be ≥ 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("Adam needs β₁, β₂ in [0, 1) and ε > 0".into());
        }
        if self.context == 0 || self.horizon == 0 {
            return fail("context and horizon must be at least 1".into());
        }
        Ok(())
    }
}

/// First and second moment buffers shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
/// Weight decay is added to the gradient as an L2 term.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Contract(format!(
            "Adam state holds {} buffers for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.len() != tensor.len() || v.len() != tensor.len() {
            return Err(Error::Contract(format!(
                "Adam buffer {i} has {} entries for a parameter of {}",
                m.len(),
                tensor.len()
            )));
        }
        let grad = tensor
            .grad()
            .ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient buffer")))?
            .to_vec();
        for (j, w) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j] + cfg.weight_decay * *w;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Training targets for the tabular tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
            Targets::Labels(v) => Targets::Labels(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum TrainSet<'a> {
    Tabular { x: &'a Tensor, y: &'a Targets },
    /// `n×L` contexts and the `n×H` values that follow them.
    Series { contexts: &'a Tensor, targets: &'a Tensor },
}

impl TrainSet<'_> {
    fn len(&self) -> usize {
        match self {
            TrainSet::Tabular { x, .. } => x.rows(),
            TrainSet::Series { contexts, .. } => contexts.rows(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean member loss averaged over the epoch's batches (and networks).
    pub loss: f64,
    pub penalty: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<EpochRecord>,
    /// Input sources of the last series rollout, for checking the autoregressive feed.
    pub feed_sources: Vec<InputSource>,
}

impl TrainReport {
    /// Loss trace as CSV: `epoch,loss,penalty`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,penalty\n");
        for r in &self.trace {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.penalty));
        }
        s
    }
}

fn check_data(config: &ModelConfig, data: &TrainSet<'_>, cfg: &TrainConfig) -> Result<()> {
    use crate::models::Task;
    match (config.task, data) {
        (Task::Regression, TrainSet::Tabular { x, y: Targets::Real(y) }) => {
            check_rows(x, y.len(), config.input_dim)
        }
        (Task::Classification, TrainSet::Tabular { x, y: Targets::Labels(y) }) => {
            if let Some(&l) = y.iter().find(|&&l| l >= config.num_classes) {
                return Err(Error::Data(format!("label {l} outside 0..{}", config.num_classes)));
            }
            check_rows(x, y.len(), config.input_dim)
        }
        (Task::Timeseries, TrainSet::Series { contexts, targets }) => {
            let (n, l) = contexts.dims()?;
            let (m, h) = targets.dims()?;
            if n != m || h != cfg.horizon || l != cfg.context {
                return Err(Error::shape("train_series", &[n, l, m, h], &[cfg.context, cfg.horizon]));
            }
            Ok(())
        }
        _ => Err(Error::Config(format!("training data does not match task {}", config.task))),
    }
}

fn check_rows(x: &Tensor, n: usize, p: usize) -> Result<()> {
    let (r, c) = x.dims()?;
    if r != n || c != p {
        return Err(Error::shape("train_tabular", &[r, c], &[n, p]));
    }
    if r == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    Ok(())
}

/// Mean loss over members (plus penalties) for one batch, on `g`'s tape.
fn batch_loss(
    net: &Network,
    config: &ModelConfig,
    g: &Graph<'_>,
    batch: &TrainSet<'_>,
    drop: Option<&mut Rng>,
    sources: &mut Vec<InputSource>,
) -> Result<(Var, Var, Option<Var>)> {
    let tape = g.tape;
    let k = net.members;
    let terms = match batch {
        TrainSet::Tabular { x, y } => match (net.forward(g, x, drop)?, y) {
            (Output::Gaussian { mu, log_var }, Targets::Real(y)) => {
                let yt = Tensor::matrix(y.len(), 1, y.clone())?.repeat_rows(k)?;
                gaussian_nll_terms(tape, mu, log_var, tape.constant(yt))?
            }
            (Output::Logits(l), Targets::Labels(y)) => {
                let rep: Vec<usize> = y.iter().flat_map(|&c| std::iter::repeat(c).take(k)).collect();
                categorical_nll_terms(tape, l, &rep)?
            }
            _ => return Err(Error::Contract("head does not match targets".into())),
        },
        TrainSet::Series { contexts, targets } => {
            let horizon = targets.cols();
            let r = net.rollout(g, contexts, horizon, Feedback::Mean, drop)?;
            *sources = r.sources.clone();
            let mut acc: Option<Var> = None;
            for h in 0..horizon {
                let col: Vec<f64> = (0..targets.rows()).map(|i| targets.get(i, h)).collect();
                let yt = Tensor::matrix(col.len(), 1, col)?.repeat_rows(k)?;
                let t = gaussian_nll_terms(tape, r.mu[h], r.log_var[h], tape.constant(yt))?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, t)?,
                    None => t,
                });
            }
            tape.scale(acc.expect("horizon ≥ 1"), 1.0 / horizon as f64)
        }
    };
    let members = member_losses(tape, terms, k)?;
    let penalties = net.penalties(g, config.ortho_lambda)?;
    let loss = ensemble_loss(tape, &members, &penalties)?;
    Ok((loss.total, loss.nll, loss.penalty))
}

fn select(data: &TrainSet<'_>, idx: &[usize]) -> Result<(Tensor, Option<Targets>, Option<Tensor>)> {
    Ok(match data {
        TrainSet::Tabular { x, y } => (x.select_rows(idx)?, Some(y.select(idx)), None),
        TrainSet::Series { contexts, targets } => {
            (contexts.select_rows(idx)?, None, Some(targets.select_rows(idx)?))
        }
    })
}

/// Trains one network in place and returns its per-epoch trace.
pub fn train_network(
    net: &mut Network,
    config: &ModelConfig,
    data: &TrainSet<'_>,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(Vec<EpochRecord>, Vec<InputSource>)> {
    let mut order_rng = rng.fork("shuffle");
    let mut drop_rng = rng.fork("dropout");
    let mut state = AdamState::new(&net.params);
    if net.dropout_rate > 0.0 {
        DropoutSpec::new(net.dropout_rate, true)?;
    }
    let n = data.len();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut sources = Vec::new();
    for epoch in 0..cfg.epochs {
        let order = order_rng.permutation(n);
        let (mut loss_sum, mut pen_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y, t) = select(data, idx)?;
            let batch = match (&y, &t) {
                (Some(y), _) => TrainSet::Tabular { x: &x, y },
                (_, Some(t)) => TrainSet::Series { contexts: &x, targets: t },
                _ => unreachable!("select returns targets"),
            };
            let tape = Tape::new();
            let g = net.params.bind(&tape);
            let drop = (net.dropout_rate > 0.0).then_some(&mut drop_rng);
            let (total, nll, pen) = batch_loss(net, config, &g, &batch, drop, &mut sources)
                .map_err(|e| with_context(e, epoch, b))?;
            tape.backward(total).map_err(|e| with_context(e, epoch, b))?;
            net.params.zero_grad();
            net.params.accumulate_grads(&g)?;
            if let Some((i, _)) = net
                .params
                .tensors()
                .iter()
                .enumerate()
                .find(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())))
            {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}, batch {b}: non-finite gradient for {}",
                    net.params.name(crate::params::ParamId(i))
                )));
            }
            adam_step(&mut net.params, &mut state, cfg)?;
            loss_sum += tape.scalar(nll);
            pen_sum += pen.map_or(0.0, |p| tape.scalar(p));
            batches += 1;
        }
        trace.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            penalty: pen_sum / batches as f64,
        });
    }
    Ok((trace, sources))
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Trains every network of `model`. Deep-ensemble members train independently
/// on the full data, each with its own stream `train{k}`, possibly in parallel.
pub fn train(model: &mut Model, data: &TrainSet<'_>, cfg: &TrainConfig, rng: &Rng) -> Result<TrainReport> {
    cfg.validate()?;
    model.config.validate()?;
    check_data(&model.config, data, cfg)?;
    let config = model.config.clone();
    let results: Vec<Result<(Vec<EpochRecord>, Vec<InputSource>)>> = model
        .networks
        .par_iter_mut()
        .enumerate()
        .map(|(k, net)| train_network(net, &config, data, cfg, &rng.fork(&format!("train{k}"))))
        .collect();
    let mut report = TrainReport::default();
    let count = results.len() as f64;
    for r in results {
        let (trace, sources) = r?;
        if report.trace.is_empty() {
            report.trace = trace.iter().map(|e| EpochRecord { loss: 0.0, penalty: 0.0, ..*e }).collect();
        }
        for (acc, e) in report.trace.iter_mut().zip(&trace) {
            acc.loss += e.loss / count;
            acc.penalty += e.penalty / count;
        }
        report.feed_sources = sources;
    }
    Ok(report)
}
