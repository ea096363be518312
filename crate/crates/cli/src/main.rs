//! `grube` experiment runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grube::data::series::load_series_csv;
use grube::data::shift::make_shift_split;
use grube::data::synth::{dataset_csv, gen_ackley, gen_ar1, AckleyConfig};
use grube::data::tabular::load_manifest;
use grube::experiment::{
    evaluate_run, forecast_run, report, run_ablation, run_experiment, ExperimentConfig, Suite,
};
use grube::fileio::{write_json, write_text};
use grube::forecast::{forecast_csv, ForecastConfig};
use grube::layers::{AdapterMask, InitScheme};
use grube::models::{Method, Task};
use grube::recurrent::GateMask;
use grube::{Error, Result, Rng};

#[derive(Parser)]
#[command(name = "grube", version, about = "BatchEnsemble and GRUBE uncertainty experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of an experiment; writes a run directory.
    Train(TrainArgs),
    /// Re-evaluate saved checkpoints of a run directory.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Seeds to evaluate (default: all seeds of the run).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample forecast paths past the end of a series from a trained run.
    Forecast {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Total sampled paths, split evenly across members.
        #[arg(long)]
        paths: Option<usize>,
        /// CSV whose column (first by default) supplies the context window.
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long)]
        column: Option<String>,
        /// Deterministic mean rollouts instead of sampled ones.
        #[arg(long)]
        zero_noise: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the tail-based shift split of a dataset and report it as JSON.
    ShiftSplit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.025)]
        q: f64,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset (CSV, plus a manifest for Ackley).
    Synth(SynthArgs),
    /// Run an ablation suite on top of a base experiment config.
    Ablate {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[command(flatten)]
        base: TrainArgs,
    },
    /// Merge run directories into CSV and markdown tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (JSON or TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Ensemble size K.
    #[arg(long = "k")]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Adapter stacks, e.g. RSB, RS or none.
    #[arg(long)]
    adapters: Option<AdapterMask>,
    /// GRUBE gates with adapters, e.g. CZF.
    #[arg(long)]
    gates: Option<GateMask>,
    #[arg(long)]
    be_layers: Option<usize>,
    #[arg(long)]
    init: Option<InitScheme>,
    #[arg(long)]
    ortho_lambda: Option<f64>,
    /// Evaluate on the tail-based shift split.
    #[arg(long)]
    shift: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(&self.config)?;
        let m = &mut c.model;
        if let Some(v) = self.method {
            m.method = v;
        }
        if let Some(v) = self.k {
            m.ensemble_size = v;
        }
        if let Some(v) = self.dropout {
            m.dropout_rate = v;
        }
        if let Some(v) = &self.hidden {
            m.hidden_dims = v.clone();
        }
        if let Some(v) = self.adapters {
            m.adapter_mask = v;
        }
        if let Some(v) = self.gates {
            m.gate_mask = Some(v);
        }
        if let Some(v) = self.be_layers {
            m.be_layer_count = Some(v);
        }
        if let Some(v) = self.init {
            m.init_scheme = v;
        }
        if let Some(v) = self.ortho_lambda {
            m.ortho_lambda = v;
        }
        let t = &mut c.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = &self.seeds {
            t.seeds = v.clone();
        }
        if let Some(v) = self.paths {
            c.forecast.total_paths = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = &self.out {
            c.output_dir = v.clone();
        }
        c.shift |= self.shift;
        Ok(c)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Adapters,
    Gates,
    Layers,
    Init,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Adapters => Suite::Adapters,
            SuiteArg::Gates => Suite::Gates,
            SuiteArg::Layers => Suite::Layers,
            SuiteArg::Init => Suite::Init,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Ackley,
    Ar1,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value = "regression")]
    task: Task,
    #[arg(long, default_value_t = 0.8)]
    phi: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = run_experiment(&cfg)?;
            for (group, metrics) in &out.summary.groups {
                for (name, m) in metrics {
                    println!("{group:>6} {name:<22} {:.5} ± {:.5}", m.mean, m.se);
                }
            }
            eprintln!("run written to {}", cfg.output_dir.display());
        }
        Command::Evaluate { run, seeds, out } => {
            let seeds = if seeds.is_empty() {
                let cfg: ExperimentConfig = grube::fileio::read_structured(run.join("config.json"))?;
                cfg.train.seeds
            } else {
                seeds
            };
            let reports = seeds.iter().map(|&s| evaluate_run(&run, s)).collect::<Result<Vec<_>>>()?;
            let text = serde_json::to_string_pretty(&reports)? + "\n";
            emit(&text, out.as_deref())?;
        }
        Command::Forecast {
            run,
            seed,
            paths,
            context,
            column,
            zero_noise,
            out,
        } => {
            let ctx = context.map(|p| load_series_csv(p, column.as_deref())).transpose()?;
            let cfg: ExperimentConfig = grube::fileio::read_structured(run.join("config.json"))?;
            let fcfg = ForecastConfig {
                total_paths: paths.unwrap_or(cfg.forecast.total_paths),
                ..cfg.forecast.clone()
            };
            let r = forecast_run(&run, seed, ctx.as_deref(), Some(&fcfg), !zero_noise)?;
            emit(&forecast_csv(&r, &fcfg.coverages)?, out.as_deref())?;
        }
        Command::ShiftSplit { manifest, q, d, seed, out } => {
            let (_, ds) = load_manifest(&manifest)?;
            let (_, rep) = make_shift_split(&ds, q, d, &mut Rng::stream(seed, "split"))?;
            match out {
                Some(p) => write_json(p, &rep)?,
                None => println!("{}", serde_json::to_string_pretty(&rep)?),
            }
        }
        Command::Synth(a) => {
            let mut rng = Rng::stream(a.seed, "data");
            match a.kind {
                SynthKind::Ackley => {
                    let cfg = AckleyConfig {
                        n: a.n,
                        d: a.d,
                        task: a.task,
                        ..AckleyConfig::default()
                    };
                    let ds = gen_ackley(&cfg, &mut rng)?;
                    write_text(&a.out, &dataset_csv(&ds))?;
                    let name = a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    let manifest = format!("path = \"{name}\"\ntarget = \"y\"\ntask = \"{}\"\n", a.task);
                    write_text(a.out.with_extension("toml"), &manifest)?;
                }
                SynthKind::Ar1 => {
                    let values = gen_ar1(a.n, a.phi, a.sigma, &mut rng)?;
                    let mut text = String::from("value\n");
                    for v in values {
                        text.push_str(&format!("{v}\n"));
                    }
                    write_text(&a.out, &text)?;
                }
            }
            eprintln!("wrote {}", a.out.display());
        }
        Command::Ablate { suite, base } => {
            let cfg = base.resolve()?;
            let rows = run_ablation(suite.into(), &cfg)?;
            for r in &rows {
                println!("{:<16} params {:>7}", r.label, r.param_count);
            }
            eprintln!("ablation written to {}", cfg.output_dir.display());
        }
        Command::Report { runs, out } => {
            let rep = report(&runs)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            for m in &rep.missing {
                eprintln!("missing run: {m}");
            }
            let md = rep.to_markdown();
            if let Some(dir) = out {
                write_text(dir.join("report.csv"), &rep.to_csv())?;
                write_text(dir.join("report.md"), &md)?;
            }
            print!("{md}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
