//! Experiment runner: multi-seed training and evaluation, ablation suites
//! and merged reports.
//!
//! A run directory holds `config.json`, `metrics_seed_<s>.json`,
//! `summary.csv`, `summary.json`, `calibration.svg`, `selective.svg`,
//! `losses.csv` and one `model_seed_<s>.json` checkpoint per seed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::series::{load_series_csv, split_series, SeriesSplit};
use crate::data::shift::{make_shift_split, ShiftReport};
use crate::data::synth::{gen_ackley, gen_ar1, AckleyConfig};
use crate::data::tabular::{load_manifest, prepare, random_split, Prepared, Split, TabularDataset};
use crate::error::{Error, Result};
use crate::fileio::{read_structured, write_json, write_text};
use crate::forecast::{aggregate_forecast, ancestral_paths, ForecastConfig};
use crate::layers::{AdapterMask, InitScheme};
use crate::metrics::{
    default_selective_grid, evaluate_classification, evaluate_forecast, evaluate_regression, summarize, svg_plot,
    CoverageGrid, MeanSe, MetricsReport, Series,
};
use crate::models::{
    CategoricalPredictive, GaussianPredictive, Method, Model, ModelConfig, PredictiveDistribution, Task,
};
use crate::numcore::Rng;
use crate::recurrent::GateMask;
use crate::trainer::{train, TrainConfig, TrainSet};

/// Where an experiment's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    /// A CSV described by a manifest file (path relative to the config file).
    Manifest { path: PathBuf },
    Ackley(AckleyConfig),
    /// Synthetic AR(1) series; the first `train` points form the training part.
    Ar1 {
        #[serde(default = "default_ar_len")]
        n: usize,
        #[serde(default = "default_phi")]
        phi: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_ar_train")]
        train: usize,
    },
    /// A univariate CSV column split chronologically at `train_fraction`.
    SeriesCsv {
        path: PathBuf,
        #[serde(default)]
        column: Option<String>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

fn default_ar_len() -> usize {
    500
}
fn default_phi() -> f64 {
    0.8
}
fn default_sigma() -> f64 {
    1.0
}
fn default_ar_train() -> usize {
    400
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_q() -> f64 {
    0.025
}
fn default_shift_features() -> usize {
    2
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    /// `input_dim` and `num_classes` are filled in from the data.
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
    /// Evaluate under the tail-based distribution shift.
    #[serde(default)]
    pub shift: bool,
    #[serde(default = "default_q")]
    pub shift_q: f64,
    #[serde(default = "default_shift_features")]
    pub shift_features: usize,
    /// Seed for synthetic data generation, fixed across run seeds.
    #[serde(default)]
    pub data_seed: u64,
    /// Upper bound on evaluated forecast windows (evenly thinned); `None` keeps all.
    #[serde(default)]
    pub max_test_windows: Option<usize>,
    /// Parallel seed workers; 0 uses the available cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads a JSON or TOML config; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = read_structured(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.dataset {
            DatasetRef::Manifest { path } | DatasetRef::SeriesCsv { path, .. } if path.is_relative() => {
                let joined = base.join(&*path);
                *path = joined.canonicalize().unwrap_or(joined);
            }
            _ => {}
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let series = matches!(self.dataset, DatasetRef::Ar1 { .. } | DatasetRef::SeriesCsv { .. });
        if series != (self.model.task == Task::Timeseries) {
            return Err(Error::Config(format!(
                "dataset kind does not match task {}",
                self.model.task
            )));
        }
        if self.shift && series {
            return Err(Error::Config("the shift split applies to tabular data only".into()));
        }
        if series && (self.forecast.horizon != self.train.horizon || self.forecast.context != self.train.context) {
            return Err(Error::Config("forecast and train must agree on context and horizon".into()));
        }
        if let DatasetRef::Ackley(a) = &self.dataset {
            if a.task != self.model.task {
                return Err(Error::Config("Ackley task differs from model task".into()));
            }
        }
        Ok(())
    }
}

/// Loaded data, shared by all seeds.
#[derive(Clone, Debug)]
pub enum LoadedData {
    Tabular(TabularDataset),
    Series { values: Vec<f64>, boundary: usize },
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let mut rng = Rng::stream(cfg.data_seed, "data");
    Ok(match &cfg.dataset {
        DatasetRef::Manifest { path } => {
            let (m, ds) = load_manifest(path)?;
            if m.task != cfg.model.task {
                return Err(Error::Config(format!("manifest task {} differs from model task {}", m.task, cfg.model.task)));
            }
            LoadedData::Tabular(ds)
        }
        DatasetRef::Ackley(a) => LoadedData::Tabular(gen_ackley(a, &mut rng)?),
        DatasetRef::Ar1 { n, phi, sigma, train } => {
            if train >= n {
                return Err(Error::Config(format!("AR(1) train length {train} must be below n = {n}")));
            }
            LoadedData::Series {
                values: gen_ar1(*n, *phi, *sigma, &mut rng)?,
                boundary: *train,
            }
        }
        DatasetRef::SeriesCsv {
            path,
            column,
            train_fraction,
        } => {
            let values = load_series_csv(path, column.as_deref())?;
            let boundary = (train_fraction * values.len() as f64).round() as usize;
            LoadedData::Series { values, boundary }
        }
    })
}

/// Metrics of one seed, per evaluation group (`test`, or `id` and `shift`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub task: Task,
    pub method: Method,
    pub param_count: usize,
    pub groups: BTreeMap<String, MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: Task,
    pub method: Method,
    pub param_count: usize,
    pub seeds: Vec<u64>,
    pub groups: BTreeMap<String, BTreeMap<String, MeanSe>>,
}

pub struct SeedOutcome {
    pub metrics: SeedMetrics,
    pub model: Model,
    pub losses: String,
    pub shift: Option<ShiftReport>,
}

pub struct RunOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub summary: RunSummary,
}

fn subset_predictive(pred: &PredictiveDistribution, idx: &[usize]) -> Result<PredictiveDistribution> {
    Ok(match pred {
        PredictiveDistribution::Regression(p) => {
            let mu = idx.iter().flat_map(|&i| p.member_mu(i).to_vec()).collect();
            let var = idx.iter().flat_map(|&i| p.member_var(i).to_vec()).collect();
            PredictiveDistribution::Regression(GaussianPredictive::from_members(idx.len(), p.members, mu, var)?)
        }
        PredictiveDistribution::Classification(p) => {
            let probs = idx
                .iter()
                .flat_map(|&i| (0..p.members).flat_map(move |k| p.member_row(i, k).to_vec()))
                .collect();
            PredictiveDistribution::Classification(CategoricalPredictive::from_members(
                idx.len(),
                p.members,
                p.classes,
                probs,
            )?)
        }
    })
}

fn evaluate_predictive(pred: &PredictiveDistribution, prepared: &Prepared, idx: &[usize]) -> Result<MetricsReport> {
    let sub = subset_predictive(pred, idx)?;
    let gammas = default_selective_grid();
    match (&sub, &prepared.test_y) {
        (PredictiveDistribution::Regression(p), crate::trainer::Targets::Real(y)) => {
            let y: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            evaluate_regression(p, &y, &CoverageGrid::default(), &gammas)
        }
        (PredictiveDistribution::Classification(p), crate::trainer::Targets::Labels(y)) => {
            let y: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            evaluate_classification(p, &y, &gammas)
        }
        _ => Err(Error::Contract("predictive does not match targets".into())),
    }
}

/// Resolves data-dependent fields of the model config.
pub fn resolve_model(cfg: &ExperimentConfig, data: &LoadedData) -> ModelConfig {
    let mut m = cfg.model.clone();
    match data {
        LoadedData::Tabular(ds) => {
            m.input_dim = ds.dim();
            if ds.task == Task::Classification {
                m.num_classes = ds.num_classes().max(2);
            }
        }
        LoadedData::Series { .. } => m.input_dim = 1,
    }
    m
}

/// Tabular split for one seed, plus the shift report when requested.
pub fn tabular_split(cfg: &ExperimentConfig, ds: &TabularDataset, seed: u64) -> Result<(Split, Option<ShiftReport>)> {
    let mut rng = Rng::stream(seed, "split");
    if cfg.shift {
        let (split, rep) = make_shift_split(ds, cfg.shift_q, cfg.shift_features, &mut rng)?;
        Ok((split, Some(rep)))
    } else {
        Ok((random_split(ds.len(), 0.2, &mut rng)?, None))
    }
}

/// Test windows kept for evaluation: all, or `max` evenly spaced ones.
pub fn thin_windows(count: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < count && m > 0 => (0..m).map(|i| i * count / m).collect(),
        _ => (0..count).collect(),
    }
}

/// Forecast evaluation of a trained series model on the test windows.
pub fn evaluate_series(model: &Model, split: &SeriesSplit, cfg: &ExperimentConfig, seed: u64) -> Result<MetricsReport> {
    let keep = thin_windows(split.test.len(), cfg.max_test_windows);
    let results: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>> = keep
        .par_iter()
        .map(|&w| {
            let ctx = split.test.contexts.row(w);
            let rng = Rng::stream(seed, &format!("forecast{w}"));
            let paths = ancestral_paths(model, ctx, &cfg.forecast, &rng, true)?;
            let r = aggregate_forecast(&paths)?;
            Ok((r.mean, r.variance, r.within, r.between, split.test.targets.row(w).to_vec()))
        })
        .collect();
    let (mut m, mut v, mut wi, mut be, mut y) = (vec![], vec![], vec![], vec![], vec![]);
    for r in results {
        let (a, b, c, d, e) = r?;
        m.push(a);
        v.push(b);
        wi.push(c);
        be.push(d);
        y.push(e);
    }
    evaluate_forecast(&m, &v, &wi, &be, &y, &CoverageGrid::default(), &default_selective_grid())
}

/// Per-seed view of the data: the split and its scaled arrays.
pub enum SeedData {
    Tabular {
        split: Split,
        prepared: Prepared,
        shift: Option<ShiftReport>,
    },
    Series(SeriesSplit),
}

pub fn seed_data(cfg: &ExperimentConfig, data: &LoadedData, seed: u64) -> Result<SeedData> {
    Ok(match data {
        LoadedData::Tabular(ds) => {
            let (split, shift) = tabular_split(cfg, ds, seed)?;
            let prepared = prepare(ds, &split)?;
            SeedData::Tabular { split, prepared, shift }
        }
        LoadedData::Series { values, boundary } => {
            SeedData::Series(split_series(values, *boundary, cfg.train.context, cfg.train.horizon)?)
        }
    })
}

/// Metrics of a trained model per evaluation group.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    sd: &SeedData,
    model: &Model,
    seed: u64,
) -> Result<BTreeMap<String, MetricsReport>> {
    let mut groups = BTreeMap::new();
    match sd {
        SeedData::Tabular { split, prepared, shift } => {
            let pred = model.predict(&prepared.test_x, &mut Rng::stream(seed, "predict"))?;
            match shift {
                Some(rep) => {
                    let pos = |rows: &[usize]| -> Vec<usize> {
                        rows.iter()
                            .map(|r| split.test.binary_search(r).expect("test row"))
                            .collect()
                    };
                    for (name, rows) in [("id", &rep.test_id), ("shift", &rep.test_shift)] {
                        if !rows.is_empty() {
                            groups.insert(name.to_string(), evaluate_predictive(&pred, prepared, &pos(rows))?);
                        }
                    }
                }
                None => {
                    let all: Vec<usize> = (0..split.test.len()).collect();
                    groups.insert("test".to_string(), evaluate_predictive(&pred, prepared, &all)?);
                }
            }
        }
        SeedData::Series(split) => {
            groups.insert("test".to_string(), evaluate_series(model, split, cfg, seed)?);
        }
    }
    for (name, r) in &groups {
        if !r.all_finite() {
            return Err(Error::Numerical(format!("non-finite metrics in group {name}")));
        }
    }
    Ok(groups)
}

/// Trains and evaluates one seed.
pub fn run_seed(cfg: &ExperimentConfig, data: &LoadedData, seed: u64) -> Result<SeedOutcome> {
    let mconf = resolve_model(cfg, data);
    let mut model = Model::build(&mconf, &Rng::stream(seed, "init"))?;
    let train_rng = Rng::stream(seed, "train");
    let sd = seed_data(cfg, data, seed)?;
    let report = match &sd {
        SeedData::Tabular { prepared, .. } => {
            let set = TrainSet::Tabular {
                x: &prepared.train_x,
                y: &prepared.train_y,
            };
            train(&mut model, &set, &cfg.train, &train_rng)?
        }
        SeedData::Series(split) => {
            let set = TrainSet::Series {
                contexts: &split.train.contexts,
                targets: &split.train.targets,
            };
            train(&mut model, &set, &cfg.train, &train_rng)?
        }
    };
    let groups = evaluate_model(cfg, &sd, &model, seed)?;
    let mut losses = String::new();
    for e in &report.trace {
        losses.push_str(&format!("{seed},{},{},{}\n", e.epoch, e.loss, e.penalty));
    }
    let shift = match sd {
        SeedData::Tabular { shift, .. } => shift,
        SeedData::Series(_) => None,
    };
    Ok(SeedOutcome {
        metrics: SeedMetrics {
            seed,
            task: mconf.task,
            method: mconf.method,
            param_count: model.param_count(),
            groups,
        },
        model,
        losses,
        shift,
    })
}

/// Reads a run directory's `config.json` and the checkpoint of `seed`.
pub fn load_run(dir: &Path, seed: u64) -> Result<(ExperimentConfig, Model)> {
    let cfg: ExperimentConfig = read_structured(dir.join("config.json"))?;
    let model = Model::load(dir.join(format!("model_seed_{seed}.json")))?;
    Ok((cfg, model))
}

/// Re-evaluates a saved checkpoint on the split its seed defines.
pub fn evaluate_run(dir: &Path, seed: u64) -> Result<SeedMetrics> {
    let (cfg, model) = load_run(dir, seed)?;
    let data = load_data(&cfg)?;
    let sd = seed_data(&cfg, &data, seed)?;
    let groups = evaluate_model(&cfg, &sd, &model, seed)?;
    Ok(SeedMetrics {
        seed,
        task: cfg.model.task,
        method: cfg.model.method,
        param_count: model.param_count(),
        groups,
    })
}

/// Forecasts `H` steps past the end of the series in original units, from
/// the last `L` observations or from `context` when given.
pub fn forecast_run(
    dir: &Path,
    seed: u64,
    context: Option<&[f64]>,
    fcfg: Option<&ForecastConfig>,
    noise: bool,
) -> Result<crate::forecast::ForecastResult> {
    let (cfg, model) = load_run(dir, seed)?;
    if cfg.model.task != Task::Timeseries {
        return Err(Error::Config("forecasting needs a timeseries run".into()));
    }
    let fcfg = fcfg.unwrap_or(&cfg.forecast);
    let data = load_data(&cfg)?;
    let SeedData::Series(split) = seed_data(&cfg, &data, seed)? else {
        return Err(Error::Config("forecasting needs series data".into()));
    };
    let LoadedData::Series { values, .. } = &data else { unreachable!() };
    let raw = context.unwrap_or(values);
    let l = fcfg.context;
    if raw.len() < l {
        return Err(Error::Data(format!("context needs {l} values, got {}", raw.len())));
    }
    let ctx: Vec<f64> = raw[raw.len() - l..].iter().map(|&v| split.scaler.scale_one(0, v)).collect();
    let paths = ancestral_paths(&model, &ctx, fcfg, &Rng::stream(seed, "forecast"), noise)?;
    let mut r = aggregate_forecast(&paths)?;
    let range = split.scaler.max[0] - split.scaler.min[0];
    let factor = if range > 0.0 { range * range } else { 1.0 };
    for m in &mut r.mean {
        *m = split.scaler.unscale_one(0, *m);
    }
    for v in r.variance.iter_mut().chain(&mut r.within).chain(&mut r.between) {
        *v *= factor;
    }
    Ok(r)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn summarize_seeds(seeds: &[SeedOutcome]) -> RunSummary {
    let first = &seeds[0].metrics;
    let mut by_group: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for s in seeds {
        for (g, r) in &s.metrics.groups {
            by_group.entry(g.clone()).or_default().push(r.clone());
        }
    }
    RunSummary {
        task: first.task,
        method: first.method,
        param_count: first.param_count,
        seeds: seeds.iter().map(|s| s.metrics.seed).collect(),
        groups: by_group.into_iter().map(|(g, r)| (g, summarize(&r))).collect(),
    }
}

/// Runs every seed (in a bounded pool) and writes the run directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    resolve_model(cfg, &data).validate()?;
    let seeds = pool(cfg.workers)?.install(|| {
        cfg.train
            .seeds
            .par_iter()
            .map(|&s| run_seed(cfg, &data, s).map_err(|e| with_seed(e, s)))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize_seeds(&seeds);
    write_run(cfg, &data, &seeds, &summary)?;
    Ok(RunOutcome { seeds, summary })
}

fn with_seed(e: Error, seed: u64) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("seed {seed}: {m}")),
        Error::Data(m) => Error::Data(format!("seed {seed}: {m}")),
        other => other,
    }
}

fn write_run(cfg: &ExperimentConfig, data: &LoadedData, seeds: &[SeedOutcome], summary: &RunSummary) -> Result<()> {
    let dir = &cfg.output_dir;
    let mut resolved = cfg.clone();
    resolved.model = resolve_model(cfg, data);
    write_json(dir.join("config.json"), &resolved)?;
    let mut losses = String::from("seed,epoch,loss,penalty\n");
    for s in seeds {
        write_json(dir.join(format!("metrics_seed_{}.json", s.metrics.seed)), &s.metrics)?;
        s.model.save(dir.join(format!("model_seed_{}.json", s.metrics.seed)))?;
        if let Some(rep) = &s.shift {
            write_json(dir.join(format!("shift_seed_{}.json", s.metrics.seed)), rep)?;
        }
        losses.push_str(&s.losses);
    }
    write_text(dir.join("losses.csv"), &losses)?;
    write_json(dir.join("summary.json"), summary)?;
    write_text(dir.join("summary.csv"), &summary_csv(summary))?;
    let (cal, sel) = plots(seeds, summary);
    write_text(dir.join("calibration.svg"), &cal)?;
    write_text(dir.join("selective.svg"), &sel)?;
    Ok(())
}

/// `group,metric,mean,se,n` rows.
pub fn summary_csv(summary: &RunSummary) -> String {
    let mut s = String::from("group,metric,mean,se,n\n");
    for (g, metrics) in &summary.groups {
        for (name, m) in metrics {
            s.push_str(&format!("{g},{name},{},{},{}\n", m.mean, m.se, m.values.len()));
        }
    }
    s
}

fn mean_curve<F: Fn(&MetricsReport) -> Vec<(f64, f64)>>(seeds: &[SeedOutcome], group: &str, f: F) -> Vec<(f64, f64)> {
    let curves: Vec<Vec<(f64, f64)>> = seeds
        .iter()
        .filter_map(|s| s.metrics.groups.get(group))
        .map(&f)
        .collect();
    let Some(first) = curves.first() else { return Vec::new() };
    (0..first.len())
        .map(|i| {
            let ys: Vec<f64> = curves.iter().filter_map(|c| c.get(i).map(|p| p.1)).collect();
            (first[i].0, ys.iter().sum::<f64>() / ys.len() as f64)
        })
        .collect()
}

fn plots(seeds: &[SeedOutcome], summary: &RunSummary) -> (String, String) {
    let groups: Vec<&String> = summary.groups.keys().collect();
    let title = format!("{} ({})", summary.method, summary.task);
    let classification = summary.task == Task::Classification;
    let cal_series: Vec<(String, Vec<(f64, f64)>)> = groups
        .iter()
        .map(|g| {
            let pts = if classification {
                mean_curve(seeds, g, |r| {
                    r.reliability
                        .iter()
                        .map(|b| (0.5 * (b.lower + b.upper), if b.count > 0 { b.accuracy } else { f64::NAN }))
                        .collect()
                })
            } else {
                mean_curve(seeds, g, |r| r.coverage.iter().map(|c| (c.nominal, c.empirical)).collect())
            };
            (g.to_string(), pts)
        })
        .collect();
    let cal = svg_plot(
        &title,
        if classification { "confidence" } else { "nominal coverage" },
        if classification { "accuracy" } else { "empirical coverage" },
        &cal_series
            .iter()
            .map(|(l, p)| Series {
                label: l,
                points: p.clone(),
            })
            .collect::<Vec<_>>(),
        true,
        None,
    );
    let sel_series: Vec<(String, Vec<(f64, f64)>)> = groups
        .iter()
        .map(|g| {
            (
                g.to_string(),
                mean_curve(seeds, g, |r| r.selective.iter().map(|p| (p.coverage, p.value)).collect()),
            )
        })
        .collect();
    let reference = sel_series.first().and_then(|(_, p)| p.last().map(|q| q.1));
    let sel = svg_plot(
        &title,
        "coverage",
        if classification { "accuracy" } else { "RMSE" },
        &sel_series
            .iter()
            .map(|(l, p)| Series {
                label: l,
                points: p.clone(),
            })
            .collect::<Vec<_>>(),
        false,
        reference,
    );
    (cal, sel)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Adapters,
    Gates,
    Layers,
    Init,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adapters" => Ok(Suite::Adapters),
            "gates" => Ok(Suite::Gates),
            "layers" => Ok(Suite::Layers),
            "init" => Ok(Suite::Init),
            _ => Err(Error::Config(format!("unknown ablation suite \"{s}\""))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Adapters => "adapters",
            Suite::Gates => "gates",
            Suite::Layers => "layers",
            Suite::Init => "init",
        })
    }
}

/// Penalty strengths of the regularized init variants.
pub const INIT_LAMBDAS: [f64; 3] = [1e-4, 1e-3, 1e-2];

/// Labeled model variants of a suite, derived from `base`.
pub fn ablation_variants(suite: Suite, base: &ModelConfig) -> Result<Vec<(String, ModelConfig)>> {
    let mut base = base.clone();
    base.method = Method::BatchEnsemble;
    let with = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let v: Vec<(String, ModelConfig)> = match suite {
        Suite::Adapters => AdapterMask::all_subsets()
            .into_iter()
            .map(|m| (m.to_string(), with(&|c| c.adapter_mask = m)))
            .collect(),
        Suite::Gates => {
            if base.task != Task::Timeseries {
                return Err(Error::Config("the gates suite needs the timeseries task".into()));
            }
            GateMask::ablation_grid()
                .into_iter()
                .map(|m| (m.to_string(), with(&|c| c.gate_mask = Some(m))))
                .collect()
        }
        Suite::Layers => {
            if base.task == Task::Timeseries {
                return Err(Error::Config("the layers suite needs a tabular task".into()));
            }
            (1..=base.total_layers())
                .map(|k| (format!("last{k}"), with(&|c| c.be_layer_count = Some(k))))
                .collect()
        }
        Suite::Init => {
            let mut v = vec![
                ("BE".to_string(), with(&|c| {
                    c.init_scheme = InitScheme::RandomSign;
                    c.ortho_lambda = 0.0;
                })),
                ("BE(O)".to_string(), with(&|c| {
                    c.init_scheme = InitScheme::Orthogonal;
                    c.ortho_lambda = 0.0;
                })),
            ];
            for l in INIT_LAMBDAS {
                v.push((format!("BE(l={l})"), with(&|c| {
                    c.init_scheme = InitScheme::RandomSign;
                    c.ortho_lambda = l;
                })));
            }
            for l in INIT_LAMBDAS {
                v.push((format!("BE(O,l={l})"), with(&|c| {
                    c.init_scheme = InitScheme::Orthogonal;
                    c.ortho_lambda = l;
                })));
            }
            v
        }
    };
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub param_count: usize,
    pub enabled: usize,
    pub summary: RunSummary,
}

/// Number of enabled components a variant carries within its suite.
fn enabled_components(suite: Suite, m: &ModelConfig) -> usize {
    match suite {
        Suite::Adapters => m.adapter_mask.count(),
        Suite::Gates => m.gate_mask.map_or(3, |g| g.count()),
        Suite::Layers => m.be_layers(),
        Suite::Init => usize::from(m.init_scheme == InitScheme::Orthogonal) + usize::from(m.ortho_lambda > 0.0),
    }
}

/// Runs every variant of `suite` into `<output_dir>/<label>` and writes
/// `ablation.csv` and `ablation.md` side-by-side tables.
pub fn run_ablation(suite: Suite, base: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let data = load_data(base)?;
    let resolved = resolve_model(base, &data);
    let variants = ablation_variants(suite, &resolved)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (label, model) in variants {
        let mut cfg = base.clone();
        cfg.model = model.clone();
        cfg.output_dir = base.output_dir.join(sanitize(&label));
        let out = run_experiment(&cfg).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("variant {label}: {m}")),
            other => other,
        })?;
        rows.push(AblationRow {
            label,
            param_count: out.summary.param_count,
            enabled: enabled_components(suite, &model),
            summary: out.summary,
        });
    }
    write_text(base.output_dir.join("ablation.csv"), &ablation_csv(&rows))?;
    write_text(base.output_dir.join("ablation.md"), &ablation_markdown(suite, &rows))?;
    Ok(rows)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn metric_columns(rows: &[AblationRow]) -> Vec<(String, String)> {
    let mut cols = std::collections::BTreeSet::new();
    for r in rows {
        for (g, m) in &r.summary.groups {
            for name in m.keys() {
                cols.insert((g.clone(), name.clone()));
            }
        }
    }
    cols.into_iter().collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,param_count,enabled,group,metric,mean,se\n");
    for r in rows {
        for (g, metrics) in &r.summary.groups {
            for (name, m) in metrics {
                s.push_str(&format!("{},{},{},{g},{name},{},{}\n", r.label, r.param_count, r.enabled, m.mean, m.se));
            }
        }
    }
    s
}

pub fn ablation_markdown(suite: Suite, rows: &[AblationRow]) -> String {
    let cols = metric_columns(rows);
    let mut s = format!("# Ablation: {suite}\n\n| variant | params |");
    for (g, m) in &cols {
        s.push_str(&format!(" {g} {m} |"));
    }
    s.push_str("\n|---|---|");
    s.push_str(&"---|".repeat(cols.len()));
    s.push('\n');
    for r in rows {
        s.push_str(&format!("| {} | {} |", r.label, r.param_count));
        for (g, m) in &cols {
            match r.summary.groups.get(g).and_then(|x| x.get(m)) {
                Some(v) => s.push_str(&format!(" {:.4} ± {:.4} |", v.mean, v.se)),
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    s
}

/// Merged view over several run directories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    pub warnings: Vec<String>,
    pub missing: Vec<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub method: Method,
    pub metric: String,
    /// Mean and SE per group.
    pub groups: BTreeMap<String, (f64, f64)>,
    /// `shift − id` when both groups exist.
    pub delta: Option<f64>,
}

/// Reads `summary.json` from every directory. Missing runs are listed and
/// skipped; differing seed counts raise a warning.
pub fn report(dirs: &[PathBuf]) -> Result<CombinedReport> {
    let mut rep = CombinedReport {
        warnings: Vec::new(),
        missing: Vec::new(),
        rows: Vec::new(),
    };
    let mut seed_counts = BTreeMap::new();
    for dir in dirs {
        let path = dir.join("summary.json");
        let summary: RunSummary = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(_) => {
                rep.missing.push(dir.display().to_string());
                continue;
            }
        };
        let run = dir.display().to_string();
        seed_counts.insert(run.clone(), summary.seeds.len());
        let mut names = std::collections::BTreeSet::new();
        for m in summary.groups.values() {
            names.extend(m.keys().cloned());
        }
        for metric in names {
            let groups: BTreeMap<String, (f64, f64)> = summary
                .groups
                .iter()
                .filter_map(|(g, m)| m.get(&metric).map(|v| (g.clone(), (v.mean, v.se))))
                .collect();
            let delta = match (groups.get("id"), groups.get("shift")) {
                (Some(i), Some(s)) => Some(s.0 - i.0),
                _ => None,
            };
            rep.rows.push(ReportRow {
                run: run.clone(),
                method: summary.method,
                metric,
                groups,
                delta,
            });
        }
    }
    let distinct: std::collections::BTreeSet<usize> = seed_counts.values().copied().collect();
    if distinct.len() > 1 {
        rep.warnings.push(format!("runs differ in seed count: {seed_counts:?}"));
    }
    Ok(rep)
}

impl CombinedReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,method,metric,group,mean,se,delta\n");
        for r in &self.rows {
            for (g, (m, se)) in &r.groups {
                let d = r.delta.map_or(String::new(), |d| d.to_string());
                s.push_str(&format!("{},{},{},{g},{m},{se},{d}\n", r.run, r.method, r.metric));
            }
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Report\n\n");
        for w in &self.warnings {
            s.push_str(&format!("> warning: {w}\n"));
        }
        for m in &self.missing {
            s.push_str(&format!("> missing run: {m}\n"));
        }
        let mut groups = std::collections::BTreeSet::new();
        for r in &self.rows {
            groups.extend(r.groups.keys().cloned());
        }
        let has_delta = self.rows.iter().any(|r| r.delta.is_some());
        s.push_str("\n| run | method | metric |");
        for g in &groups {
            s.push_str(&format!(" {g} |"));
        }
        if has_delta {
            s.push_str(" Δ |");
        }
        s.push_str("\n|---|---|---|");
        s.push_str(&"---|".repeat(groups.len() + usize::from(has_delta)));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("| {} | {} | {} |", r.run, r.method, r.metric));
            for g in &groups {
                match r.groups.get(g) {
                    Some((m, se)) => s.push_str(&format!(" {m:.4} ± {se:.4} |")),
                    None => s.push_str(" |"),
                }
            }
            if has_delta {
                match r.delta {
                    Some(d) => s.push_str(&format!(" {d:+.4} |")),
                    None => s.push_str(" |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(task: Task) -> ModelConfig {
        ModelConfig::new(task, 3, Method::BatchEnsemble)
    }

    #[test]
    fn suite_sizes() {
        assert_eq!(ablation_variants(Suite::Adapters, &base(Task::Regression)).unwrap().len(), 8);
        assert_eq!(ablation_variants(Suite::Gates, &base(Task::Timeseries)).unwrap().len(), 7);
        let mut deep = base(Task::Regression);
        deep.hidden_dims = vec![32; 9];
        assert_eq!(ablation_variants(Suite::Layers, &deep).unwrap().len(), 10);
        assert_eq!(ablation_variants(Suite::Init, &base(Task::Regression)).unwrap().len(), 8);
        assert!(matches!(
            ablation_variants(Suite::Gates, &base(Task::Regression)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn variant_param_counts_are_monotone() {
        let mut deep = base(Task::Regression);
        deep.hidden_dims = vec![32; 9];
        for (suite, m) in [
            (Suite::Adapters, base(Task::Regression)),
            (Suite::Layers, deep),
            (Suite::Gates, ModelConfig::new(Task::Timeseries, 1, Method::BatchEnsemble)),
        ] {
            let v = ablation_variants(suite, &m).unwrap();
            let counted: Vec<(usize, usize)> = v
                .iter()
                .map(|(_, c)| {
                    let n = Model::build(c, &Rng::new(0)).unwrap().param_count();
                    (enabled_components(suite, c), n)
                })
                .collect();
            for a in &counted {
                for b in &counted {
                    if a.0 < b.0 {
                        assert!(a.1 < b.1, "{suite}: {a:?} vs {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn thinning_is_even() {
        assert_eq!(thin_windows(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(thin_windows(3, Some(5)), vec![0, 1, 2]);
        assert_eq!(thin_windows(3, None), vec![0, 1, 2]);
    }
}
