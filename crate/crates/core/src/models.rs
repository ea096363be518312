//! Full predictors: BatchEnsemble MLPs, the GRUBE forecaster and the single,
//! MC-dropout and deep-ensemble baselines.
//!
//! Every network emits member-grouped rows: for `n` inputs and `K` members,
//! output row `i·K + k` belongs to member `k`. Networks without ensemble
//! layers have `K = 1`; a deep ensemble holds `K` such networks and MC
//! dropout runs one network `K` times.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    dropout, init_adapters_where_feasible, orthogonality_penalty, AdapterMask, DenseLinear,
    DropoutSpec, EnsembleLinear, InitScheme,
};
use crate::losses::{aggregate_categorical, aggregate_gaussian};
use crate::numcore::{Rng, Tape, Tensor, Var};
use crate::params::{Graph, ParamSet};
use crate::recurrent::{unroll, GateMask, GruCell, GrubeCell, RecurrentCell};

/// Bounds applied to the predicted log-variance before exponentiation.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
    Timeseries,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BatchEnsemble,
    McDropout,
    DeepEnsemble,
    Single,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Single,
        Method::McDropout,
        Method::DeepEnsemble,
        Method::BatchEnsemble,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::BatchEnsemble => "batch_ensemble",
            Method::McDropout => "mc_dropout",
            Method::DeepEnsemble => "deep_ensemble",
            Method::Single => "single",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "batch_ensemble" | "be" => Ok(Method::BatchEnsemble),
            "mc_dropout" | "mcd" => Ok(Method::McDropout),
            "deep_ensemble" | "de" => Ok(Method::DeepEnsemble),
            "single" => Ok(Method::Single),
            _ => Err(Error::Config(format!("unknown method \"{s}\""))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
            Task::Timeseries => "timeseries",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            "timeseries" | "time_series" | "time-series" => Ok(Task::Timeseries),
            _ => Err(Error::Config(format!("unknown task \"{s}\""))),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_k() -> usize {
    10
}
fn default_dropout() -> f64 {
    0.1
}
fn default_rnn_hidden() -> usize {
    32
}
fn default_classes() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    /// Filled in from the data by the experiment runner when left at 0.
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_k", rename = "K", alias = "k")]
    pub ensemble_size: usize,
    pub method: Method,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    /// Number of trailing layers that are ensemble layers; `None` means all.
    #[serde(default)]
    pub be_layer_count: Option<usize>,
    #[serde(default)]
    pub gate_mask: Option<GateMask>,
    #[serde(default)]
    pub adapter_mask: AdapterMask,
    #[serde(default)]
    pub init_scheme: InitScheme,
    #[serde(default)]
    pub ortho_lambda: f64,
    #[serde(default = "default_rnn_hidden")]
    pub rnn_hidden: usize,
}

impl ModelConfig {
    pub fn new(task: Task, input_dim: usize, method: Method) -> Self {
        Self {
            task,
            input_dim,
            hidden_dims: default_hidden(),
            num_classes: default_classes(),
            ensemble_size: default_k(),
            method,
            dropout_rate: default_dropout(),
            be_layer_count: None,
            gate_mask: None,
            adapter_mask: AdapterMask::ALL,
            init_scheme: InitScheme::RandomSign,
            ortho_lambda: 0.0,
            rnn_hidden: default_rnn_hidden(),
        }
    }

    /// Recurrent layer (time series only) + hidden layers + output layer.
    pub fn total_layers(&self) -> usize {
        usize::from(self.task == Task::Timeseries) + self.hidden_dims.len() + 1
    }

    pub fn be_layers(&self) -> usize {
        match self.method {
            Method::BatchEnsemble => self.be_layer_count.unwrap_or(self.total_layers()),
            _ => 0,
        }
    }

    /// Number of predictive members: `K` for the ensembles and MC dropout, 1 for single.
    pub fn members(&self) -> usize {
        match self.method {
            Method::Single => 1,
            _ => self.ensemble_size,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.task {
            Task::Classification => self.num_classes,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1".into());
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return fail("hidden_dims must be non-empty with positive widths".into());
        }
        if self.ensemble_size == 0 {
            return fail("K must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.task == Task::Classification && self.num_classes < 2 {
            return fail("classification needs num_classes ≥ 2".into());
        }
        if let Some(c) = self.be_layer_count {
            if c > self.total_layers() {
                return fail(format!(
                    "be_layer_count {c} exceeds the {} layers of the model",
                    self.total_layers()
                ));
            }
            if self.method != Method::BatchEnsemble {
                return fail("be_layer_count requires method batch_ensemble".into());
            }
        }
        if self.gate_mask.is_some() {
            if self.task != Task::Timeseries {
                return fail("gate_mask applies only to the timeseries task".into());
            }
            if self.method != Method::BatchEnsemble {
                return fail("gate_mask requires method batch_ensemble".into());
            }
        }
        if !(self.ortho_lambda >= 0.0 && self.ortho_lambda.is_finite()) {
            return fail(format!("ortho_lambda must be finite and ≥ 0, got {}", self.ortho_lambda));
        }
        if self.task == Task::Timeseries {
            if self.input_dim != 1 {
                return fail("timeseries models are univariate (input_dim = 1)".into());
            }
            if self.rnn_hidden == 0 {
                return fail("rnn_hidden must be at least 1".into());
            }
            if self.method == Method::BatchEnsemble && self.be_layers() != self.total_layers() {
                return fail(
                    "timeseries batch_ensemble needs every layer to be an ensemble layer".into(),
                );
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(DenseLinear),
    Ensemble(EnsembleLinear),
}

impl Layer {
    fn forward(&self, g: &Graph<'_>, z: Var) -> Result<Var> {
        match self {
            Layer::Dense(l) => l.forward(g, z),
            Layer::Ensemble(l) => l.forward(g, z),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(l) => l.param_count(),
            Layer::Ensemble(l) => l.param_count(),
        }
    }

    pub fn as_ensemble(&self) -> Option<&EnsembleLinear> {
        match self {
            Layer::Ensemble(l) => Some(l),
            Layer::Dense(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Gru(GruCell),
    Grube(GrubeCell),
}

impl Cell {
    fn as_dyn(&self) -> &dyn RecurrentCell {
        match self {
            Cell::Gru(c) => c,
            Cell::Grube(c) => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Head {
    /// Separate mean and log-variance maps.
    Gaussian { mean: Layer, log_var: Layer },
    /// One fused map to class logits.
    Categorical(Layer),
}

/// Network outputs on member-grouped rows.
#[derive(Clone, Copy, Debug)]
pub enum Output {
    Gaussian { mu: Var, log_var: Var },
    Logits(Var),
}

/// Origin of a recurrent input during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputSource {
    Observed,
    Predicted,
}

/// What a rollout feeds back after each forecast step.
pub enum Feedback<'a> {
    /// The predicted mean, kept on the tape.
    Mean,
    /// `μ + σ·ε`, detached; with `noise = false`, `ε ≡ 0`.
    Sample { rng: &'a mut Rng, noise: bool },
}

/// Per-step outputs of a multi-step rollout, plus which inputs the cell saw.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub mu: Vec<Var>,
    pub log_var: Vec<Var>,
    /// Values fed back after each step (one fewer than the horizon).
    pub fed: Vec<Var>,
    pub sources: Vec<InputSource>,
}

/// One set of parameters and the layers that read them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub params: ParamSet,
    pub members: usize,
    pub cell: Option<Cell>,
    pub hidden: Vec<Layer>,
    pub head: Head,
    pub dropout_rate: f64,
}

impl Network {
    fn build(config: &ModelConfig, members: usize, dropout_rate: f64, rng: &Rng) -> Result<(Self, usize)> {
        let mut params = ParamSet::new();
        let total = config.total_layers();
        let first_be = total - config.be_layers();
        let mut index = 0;
        let make = |params: &mut ParamSet, name: &str, p: usize, q: usize, index: usize| -> Result<Layer> {
            let layer = if index >= first_be {
                Layer::Ensemble(EnsembleLinear::new(params, name, p, q, members, config.adapter_mask, rng)?)
            } else {
                Layer::Dense(DenseLinear::new(params, name, p, q, rng))
            };
            Ok(layer)
        };

        let mut width = config.input_dim;
        let cell = if config.task == Task::Timeseries {
            let q = config.rnn_hidden;
            let cell = if index >= first_be {
                Cell::Grube(GrubeCell::new(
                    &mut params,
                    "rnn",
                    width,
                    q,
                    members,
                    config.gate_mask.unwrap_or(GateMask::ALL),
                    config.adapter_mask,
                    rng,
                )?)
            } else {
                Cell::Gru(GruCell::new(&mut params, "rnn", width, q, rng))
            };
            index += 1;
            width = q;
            Some(cell)
        } else {
            None
        };

        let mut hidden = Vec::with_capacity(config.hidden_dims.len());
        for (i, &q) in config.hidden_dims.iter().enumerate() {
            hidden.push(make(&mut params, &format!("layer{i}"), width, q, index)?);
            index += 1;
            width = q;
        }
        let head = match config.task {
            Task::Classification => Head::Categorical(make(&mut params, "head", width, config.num_classes, index)?),
            _ => Head::Gaussian {
                mean: make(&mut params, "head.mu", width, 1, index)?,
                log_var: make(&mut params, "head.logvar", width, 1, index)?,
            },
        };

        let mut net = Self {
            params,
            members,
            cell,
            hidden,
            head,
            dropout_rate,
        };
        let mut fallbacks = 0;
        let layers: Vec<EnsembleLinear> = net.ensemble_layers().into_iter().cloned().collect();
        for (i, layer) in layers.iter().enumerate() {
            let mut ar = rng.fork(&format!("adapters.{i}"));
            fallbacks += init_adapters_where_feasible(&mut net.params, layer, config.init_scheme, &mut ar)?;
        }
        Ok((net, fallbacks))
    }

    /// Every ensemble layer, recurrent gates first, in forward order.
    pub fn ensemble_layers(&self) -> Vec<&EnsembleLinear> {
        let mut v: Vec<&EnsembleLinear> = Vec::new();
        if let Some(Cell::Grube(c)) = &self.cell {
            v.extend(c.ensemble_gates());
        }
        v.extend(self.hidden.iter().filter_map(Layer::as_ensemble));
        match &self.head {
            Head::Gaussian { mean, log_var } => {
                v.extend(mean.as_ensemble());
                v.extend(log_var.as_ensemble());
            }
            Head::Categorical(l) => v.extend(l.as_ensemble()),
        }
        v
    }

    /// Sum of the per-layer parameter formulas.
    pub fn formula_param_count(&self) -> usize {
        let cell = self.cell.as_ref().map_or(0, |c| c.as_dyn().param_count());
        let hidden: usize = self.hidden.iter().map(Layer::param_count).sum();
        let head = match &self.head {
            Head::Gaussian { mean, log_var } => mean.param_count() + log_var.param_count(),
            Head::Categorical(l) => l.param_count(),
        };
        cell + hidden + head
    }

    /// Orthogonality penalties on every adapter stack wide enough for orthonormal rows.
    pub fn penalties(&self, g: &Graph<'_>, lambda: f64) -> Result<Vec<Var>> {
        if lambda == 0.0 {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for layer in self.ensemble_layers() {
            for id in layer.orthogonalizable_stacks() {
                out.push(orthogonality_penalty(g.tape, g.var(id), lambda)?);
            }
        }
        Ok(out)
    }

    fn replicate(&self, g: &Graph<'_>, h: Var, replicated: &mut bool) -> Result<Var> {
        if *replicated || self.members == 1 {
            *replicated = true;
            return Ok(h);
        }
        *replicated = true;
        g.tape.repeat_rows(h, self.members)
    }

    fn apply(&self, g: &Graph<'_>, layer: &Layer, h: Var, replicated: &mut bool) -> Result<Var> {
        let h = match layer {
            Layer::Ensemble(_) => self.replicate(g, h, replicated)?,
            Layer::Dense(_) => h,
        };
        layer.forward(g, h)
    }

    fn trunk(&self, g: &Graph<'_>, mut h: Var, replicated: &mut bool, drop: &mut Option<&mut Rng>) -> Result<Var> {
        for layer in &self.hidden {
            h = g.tape.relu(self.apply(g, layer, h, replicated)?);
            if let Some(rng) = drop.as_deref_mut() {
                h = dropout(g.tape, h, DropoutSpec::new(self.dropout_rate, true)?, rng)?;
            }
        }
        Ok(h)
    }

    fn head(&self, g: &Graph<'_>, h: Var, replicated: &mut bool) -> Result<Output> {
        let out = match &self.head {
            Head::Gaussian { mean, log_var } => {
                let mu = self.apply(g, mean, h, replicated)?;
                let raw = self.apply(g, log_var, h, replicated)?;
                Output::Gaussian {
                    mu,
                    log_var: g.tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX),
                }
            }
            Head::Categorical(l) => Output::Logits(self.apply(g, l, h, replicated)?),
        };
        if *replicated || self.members == 1 {
            return Ok(out);
        }
        // No ensemble layer at all: members coincide, rows are still member-grouped.
        let k = self.members;
        Ok(match out {
            Output::Gaussian { mu, log_var } => Output::Gaussian {
                mu: g.tape.repeat_rows(mu, k)?,
                log_var: g.tape.repeat_rows(log_var, k)?,
            },
            Output::Logits(l) => Output::Logits(g.tape.repeat_rows(l, k)?),
        })
    }

    /// Tabular forward pass on `n×p` inputs; returns `n·K` member-grouped rows.
    /// Passing `drop` applies dropout after every hidden activation.
    pub fn forward(&self, g: &Graph<'_>, x: &Tensor, mut drop: Option<&mut Rng>) -> Result<Output> {
        if self.cell.is_some() {
            return Err(Error::Contract("forward is for tabular networks; use rollout".into()));
        }
        let mut replicated = false;
        let x = g.tape.constant(x.clone());
        let h = self.trunk(g, x, &mut replicated, &mut drop)?;
        self.head(g, h, &mut replicated)
    }

    /// Multi-step rollout from `n×L` univariate contexts.
    ///
    /// The cell reads the `L` observed values, then the head predicts step 1;
    /// each later step's input is the value fed back from the previous step.
    pub fn rollout(
        &self,
        g: &Graph<'_>,
        context: &Tensor,
        horizon: usize,
        mut feedback: Feedback<'_>,
        mut drop: Option<&mut Rng>,
    ) -> Result<Rollout> {
        let cell = self
            .cell
            .as_ref()
            .ok_or_else(|| Error::Contract("rollout needs a recurrent network".into()))?
            .as_dyn();
        if horizon == 0 {
            return Err(Error::Parameter("forecast horizon must be at least 1".into()));
        }
        let (n, len) = context.dims()?;
        let members = cell.members();
        let h0 = g.tape.constant(Tensor::zeros(&[n * members, cell.hidden_dim()]));
        let seq = context.clone().reshape(&[n, len, 1])?;
        let mut h = *unroll(cell, g, &seq, h0)?.last().expect("len ≥ 1");
        let mut sources = vec![InputSource::Observed; len];
        let mut out = Rollout {
            mu: Vec::with_capacity(horizon),
            log_var: Vec::with_capacity(horizon),
            fed: Vec::with_capacity(horizon.saturating_sub(1)),
            sources: Vec::new(),
        };
        let rows = n * members;
        for step in 0..horizon {
            let mut replicated = members > 1;
            let top = self.trunk(g, h, &mut replicated, &mut drop)?;
            let Output::Gaussian { mu, log_var } = self.head(g, top, &mut replicated)? else {
                return Err(Error::Contract("rollout needs a Gaussian head".into()));
            };
            let (mrows, _) = g.tape.dims(mu);
            if mrows != rows {
                return Err(Error::shape("rollout", &[mrows], &[rows]));
            }
            out.mu.push(mu);
            out.log_var.push(log_var);
            if step + 1 == horizon {
                break;
            }
            let next = match &mut feedback {
                Feedback::Mean => mu,
                Feedback::Sample { rng, noise } => {
                    let m = g.tape.value(mu);
                    let lv = g.tape.value(log_var);
                    let vals: Vec<f64> = m
                        .data()
                        .iter()
                        .zip(lv.data())
                        .map(|(&m, &lv)| {
                            if *noise {
                                m + (0.5 * lv).exp() * rng.normal()
                            } else {
                                m
                            }
                        })
                        .collect();
                    g.tape.constant(Tensor::matrix(rows, 1, vals)?)
                }
            };
            out.fed.push(next);
            sources.push(InputSource::Predicted);
            h = cell.step(g, next, h)?;
        }
        out.sources = sources;
        Ok(out)
    }
}

/// Per-member Gaussian outputs (`[i·K + k]`) and their moment-matched aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPredictive {
    pub n: usize,
    pub members: usize,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianPredictive {
    pub fn from_members(n: usize, members: usize, mu: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mu.len() != n * members || var.len() != n * members {
            return Err(Error::shape("gaussian_predictive", &[mu.len(), var.len()], &[n * members]));
        }
        let (mean, variance) = (0..n)
            .map(|i| {
                let r = i * members..(i + 1) * members;
                aggregate_gaussian(&mu[r.clone()], &var[r])
            })
            .unzip();
        Ok(Self {
            n,
            members,
            mu,
            var,
            mean,
            variance,
        })
    }

    pub fn member_mu(&self, i: usize) -> &[f64] {
        &self.mu[i * self.members..(i + 1) * self.members]
    }

    pub fn member_var(&self, i: usize) -> &[f64] {
        &self.var[i * self.members..(i + 1) * self.members]
    }
}

/// Per-member class probabilities (`[(i·K + k)·C + c]`) and their average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPredictive {
    pub n: usize,
    pub members: usize,
    pub classes: usize,
    pub probs: Vec<f64>,
    pub mean_probs: Vec<f64>,
}

impl CategoricalPredictive {
    pub fn from_members(n: usize, members: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n * members * classes {
            return Err(Error::shape(
                "categorical_predictive",
                &[probs.len()],
                &[n * members * classes],
            ));
        }
        let mut mean_probs = Vec::with_capacity(n * classes);
        for i in 0..n {
            let rows: Vec<&[f64]> = (0..members)
                .map(|k| &probs[(i * members + k) * classes..(i * members + k + 1) * classes])
                .collect();
            mean_probs.extend(aggregate_categorical(&rows));
        }
        Ok(Self {
            n,
            members,
            classes,
            probs,
            mean_probs,
        })
    }

    pub fn member_row(&self, i: usize, k: usize) -> &[f64] {
        let start = (i * self.members + k) * self.classes;
        &self.probs[start..start + self.classes]
    }

    pub fn mean_row(&self, i: usize) -> &[f64] {
        &self.mean_probs[i * self.classes..(i + 1) * self.classes]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PredictiveDistribution {
    Regression(GaussianPredictive),
    Classification(CategoricalPredictive),
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Reorders `[k][i]` blocks from independent passes into `[i·K + k]`.
fn interleave(blocks: &[Vec<f64>], width: usize) -> Vec<f64> {
    let k = blocks.len();
    let n = blocks.first().map_or(0, |b| b.len() / width);
    let mut out = vec![0.0; n * k * width];
    for (m, block) in blocks.iter().enumerate() {
        for i in 0..n {
            let dst = (i * k + m) * width;
            out[dst..dst + width].copy_from_slice(&block[i * width..(i + 1) * width]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub networks: Vec<Network>,
    /// Adapter stacks whose orthogonal init fell back to random signs.
    #[serde(default)]
    pub ortho_fallbacks: usize,
}

impl Model {
    /// Builds the networks with initialization streams derived from `rng`.
    /// Deep-ensemble member `k` uses stream `member{k}`; all other methods use `member0`.
    pub fn build(config: &ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let (count, members, rate) = match config.method {
            Method::Single => (1, 1, 0.0),
            Method::McDropout => (1, 1, config.dropout_rate),
            Method::DeepEnsemble => (config.ensemble_size, 1, 0.0),
            Method::BatchEnsemble => (1, config.ensemble_size, 0.0),
        };
        let mut networks = Vec::with_capacity(count);
        let mut fallbacks = 0;
        for k in 0..count {
            let (net, f) = Network::build(config, members, rate, &rng.fork(&format!("member{k}")))?;
            networks.push(net);
            fallbacks += f;
        }
        Ok(Self {
            config: config.clone(),
            seed: rng.seed(),
            networks,
            ortho_fallbacks: fallbacks,
        })
    }

    /// Exact count of scalar parameters over every tensor of every network.
    pub fn param_count(&self) -> usize {
        self.networks.iter().map(|n| n.params.scalar_count()).sum()
    }

    /// The same count from the per-layer formulas.
    pub fn formula_param_count(&self) -> usize {
        self.networks.iter().map(Network::formula_param_count).sum()
    }

    pub fn members(&self) -> usize {
        self.config.members()
    }

    fn ensure_built(&self) -> Result<()> {
        if self.networks.is_empty() {
            return Err(Error::State("model has no networks; build or load it first".into()));
        }
        Ok(())
    }

    /// Passes per network: `K` dropout passes for MC dropout, one otherwise.
    fn passes(&self) -> usize {
        match self.config.method {
            Method::McDropout => self.config.ensemble_size,
            _ => 1,
        }
    }

    /// Predictive distribution for `n×p` tabular inputs, or one-step-ahead
    /// for `n×L` series contexts.
    pub fn predict(&self, x: &Tensor, rng: &mut Rng) -> Result<PredictiveDistribution> {
        self.ensure_built()?;
        let n = x.rows();
        let classes = self.config.output_dim();
        let mut mu_blocks = Vec::new();
        let mut var_blocks = Vec::new();
        let mut prob_blocks = Vec::new();
        let mut per_net_members = 1;
        for net in &self.networks {
            per_net_members = net.members;
            for _ in 0..self.passes() {
                let tape = Tape::new();
                let g = net.params.bind_frozen(&tape);
                let drop = (net.dropout_rate > 0.0).then_some(&mut *rng);
                let out = if net.cell.is_some() {
                    let r = net.rollout(&g, x, 1, Feedback::Mean, drop)?;
                    Output::Gaussian {
                        mu: r.mu[0],
                        log_var: r.log_var[0],
                    }
                } else {
                    net.forward(&g, x, drop)?
                };
                match out {
                    Output::Gaussian { mu, log_var } => {
                        mu_blocks.push(tape.value(mu).into_data());
                        var_blocks.push(tape.value(log_var).data().iter().map(|v| v.exp()).collect());
                    }
                    Output::Logits(l) => {
                        prob_blocks.push(softmax_rows(tape.value(l).data(), classes));
                    }
                }
            }
        }
        let members = per_net_members * mu_blocks.len().max(prob_blocks.len());
        if per_net_members > 1 {
            // One ensemble network already produced member-grouped rows.
            return if let (Some(mu), Some(var)) = (mu_blocks.pop(), var_blocks.pop()) {
                Ok(PredictiveDistribution::Regression(GaussianPredictive::from_members(
                    n, members, mu, var,
                )?))
            } else {
                let probs = prob_blocks.pop().expect("one pass");
                Ok(PredictiveDistribution::Classification(CategoricalPredictive::from_members(
                    n, members, classes, probs,
                )?))
            };
        }
        if prob_blocks.is_empty() {
            Ok(PredictiveDistribution::Regression(GaussianPredictive::from_members(
                n,
                members,
                interleave(&mu_blocks, 1),
                interleave(&var_blocks, 1),
            )?))
        } else {
            Ok(PredictiveDistribution::Classification(CategoricalPredictive::from_members(
                n,
                members,
                classes,
                interleave(&prob_blocks, classes),
            )?))
        }
    }

    /// Writes config, seed and every parameter tensor as JSON. Floats round-trip exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Model = serde_json::from_str(&text)?;
        model.config.validate()?;
        model.ensure_built()?;
        Ok(model)
    }
}
