//! The `ctm` command: train, eval, trace, plot, dataset and params.

mod svg;
mod trace;

pub use trace::{write_trace, TraceFiles, NEURON_SCHEMA, TRACE_SCHEMA};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::ctm_param_count;
use crate::network::{check_compatible, ModelConfig, Network};
use crate::tasks::{Dataset, TaskConfig};
use crate::trainer::{
    load_checkpoint, predict, report, resolve_loss, train, CheckpointMeta, MetricRecord, TrainConfig,
};

pub const OUTPUT_DIR_ENV: &str = "CTM_OUTPUT_DIR";
pub const CONFIG_ECHO: &str = "config.toml";
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// A run description: task, model and optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Where artifacts go; overridden by `--out` and by `CTM_OUTPUT_DIR`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: RunConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.task.validate()?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        check_compatible(&cfg.model, &cfg.task)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .usage()?;
        Self::parse(&text)
            .with_context(|| format!("in config {}", path.display()))
            .usage()
    }

    /// Copy with every default written out, so the echo fully describes the run.
    pub fn materialized(&self, output_dir: &Path) -> Self {
        let mut cfg = self.clone();
        cfg.output_dir = Some(output_dir.to_path_buf());
        cfg.train.loss = Some(cfg.train.loss_mode(&cfg.model, &cfg.task));
        cfg
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctm", version, about = "Continuous Thought Machine experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model described by a TOML run config.
    Train {
        config: PathBuf,
        /// Output directory (overrides the config and CTM_OUTPUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print a JSON report.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        source: DataSource,
        /// Certainty threshold for halting.
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        /// Reliability bins.
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-tick traces and plots for selected instances.
    Trace {
        checkpoint: PathBuf,
        #[command(flatten)]
        source: DataSource,
        /// First instance to trace.
        #[arg(long, default_value_t = 0)]
        instance: usize,
        /// Number of consecutive instances.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Neurons sampled into the activation CSV and plot.
        #[arg(long, default_value_t = 16)]
        neurons: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot loss and accuracy curves from a metric log.
    Plot {
        metrics: PathBuf,
        /// Directory for loss.svg and accuracy.svg (defaults to the log's).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a frozen example set for a run config's task.
    Dataset {
        config: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameter tensors of a run config's model.
    Params { config: PathBuf },
}

/// Where evaluation examples come from: a saved dataset, or fresh draws of
/// the checkpoint's (or a config's) task.
#[derive(Debug, clap::Args)]
struct DataSource {
    /// Take the task from this run config instead of the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use a saved dataset.
    #[arg(long, conflicts_with = "config")]
    dataset: Option<PathBuf>,
    /// Number of generated examples.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Seed of the generated examples (defaults to the training seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

trait Classify<T> {
    fn usage(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            code: EXIT_USAGE,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            code: EXIT_RUNTIME,
            error: e.into(),
        })
    }
}

/// Configuration mistakes exit 1; everything else that fails while running exits 2.
fn classify<T>(r: Result<T, Error>) -> Result<T, CliError> {
    match r {
        Err(e @ (Error::Config(_) | Error::InvalidArgument(_))) => Err(e).usage(),
        other => other.runtime(),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            e.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, out } => cmd_train(&config, out),
        Command::Eval {
            checkpoint,
            source,
            threshold,
            bins,
            out,
        } => cmd_eval(&checkpoint, &source, threshold, bins, out.as_deref()),
        Command::Trace {
            checkpoint,
            source,
            instance,
            count,
            neurons,
            out,
        } => cmd_trace(&checkpoint, &source, instance, count, neurons, out),
        Command::Plot { metrics, out } => cmd_plot(&metrics, out),
        Command::Dataset {
            config,
            count,
            seed,
            out,
        } => cmd_dataset(&config, count, seed, &out),
        Command::Params { config } => cmd_params(&config),
    }
}

fn output_dir(flag: Option<PathBuf>, configured: Option<&Path>, fallback: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn cmd_train(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfigFile::load(config_path)?;
    let dir = output_dir(out, cfg.output_dir.as_deref(), &format!("runs/{}", cfg.task.kind()));
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .usage()?;
    let echo = toml::to_string(&cfg.materialized(&dir)).runtime()?;
    fs::write(dir.join(CONFIG_ECHO), echo)
        .with_context(|| format!("cannot write to output directory {}", dir.display()))
        .usage()?;
    let mut net = classify(Network::new(&cfg.model, cfg.train.seed))?;
    eprintln!(
        "training {} ({} parameters) on {} for up to {} iterations",
        cfg.model.kind(),
        net.param_count(),
        cfg.task.kind(),
        cfg.train.iterations
    );
    let rep = classify(train(&mut net, &cfg.task, &cfg.train, Some(&dir)))?;
    let (best_iter, best_acc) = rep.best.unwrap_or((0, rep.final_eval.accuracy));
    println!(
        "iterations {}  eval loss {:.4}  eval accuracy {:.4}  best {:.4} at iter {}  -> {}",
        rep.iterations,
        rep.final_eval.loss,
        rep.final_eval.accuracy,
        best_acc,
        best_iter,
        dir.display()
    );
    Ok(())
}

struct Loaded {
    network: Network,
    meta: CheckpointMeta,
    task: TaskConfig,
    dataset: Dataset,
}

fn load_for_analysis(checkpoint: &Path, source: &DataSource, min_size: usize) -> Result<Loaded, CliError> {
    let (network, meta) = load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))
        .usage()?;
    let seed = source
        .seed
        .or(meta.train.as_ref().map(|t| t.seed))
        .unwrap_or(meta.seed);
    let dataset = match (&source.dataset, &source.config) {
        (Some(path), _) => Dataset::load(path)
            .with_context(|| format!("loading dataset {}", path.display()))
            .usage()?,
        (None, Some(path)) => {
            let cfg = RunConfigFile::load(path)?;
            classify(Dataset::generate(&cfg.task, seed, source.size.max(min_size)))?
        }
        (None, None) => {
            let task = meta
                .task
                .clone()
                .ok_or_else(|| anyhow!("checkpoint records no task; pass --config or --dataset"))
                .usage()?;
            classify(Dataset::generate(&task, seed, source.size.max(min_size)))?
        }
    };
    let task = dataset.meta.task.clone();
    check_compatible(&meta.model, &task).usage()?;
    Ok(Loaded {
        network,
        meta,
        task,
        dataset,
    })
}

fn cmd_eval(checkpoint: &Path, source: &DataSource, threshold: f64, bins: usize, out: Option<&Path>) -> Result<(), CliError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(anyhow!("--threshold must lie in (0, 1], got {threshold}")).usage();
    }
    if bins < 2 {
        return Err(anyhow!("--bins must be at least 2, got {bins}")).usage();
    }
    let l = load_for_analysis(checkpoint, source, 1)?;
    let mode = resolve_loss(l.meta.train.as_ref().and_then(|t| t.loss), &l.meta.model, &l.task);
    let preds = classify(predict(&l.network, &l.dataset, mode, 64))?;
    let rep = classify(report(l.meta.model.kind(), &preds, mode, threshold, bins))?;
    let json = serde_json::to_string_pretty(&rep).runtime()?;
    match out {
        Some(path) => fs::write(path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_trace(
    checkpoint: &Path,
    source: &DataSource,
    instance: usize,
    count: usize,
    neurons: usize,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let needed = instance.checked_add(count).ok_or_else(|| anyhow!("instance range overflows")).usage()?;
    let l = load_for_analysis(checkpoint, source, needed)?;
    if count == 0 || needed > l.dataset.len() {
        return Err(anyhow!(
            "instances {instance}..{needed} out of range for {} examples",
            l.dataset.len()
        ))
        .usage();
    }
    let dir = output_dir(out, None, "trace");
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .usage()?;
    for i in instance..needed {
        let files = classify(write_trace(
            &l.network,
            &l.dataset.examples[i],
            &l.dataset.meta.input_shape,
            i,
            neurons,
            &dir,
        ))?;
        for f in files.all() {
            println!("{}", f.display());
        }
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

fn cmd_plot(metrics: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let records = read_metrics(metrics).usage()?;
    let dir = out.unwrap_or_else(|| metrics.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir).usage()?;
    let series = |kind: &str, f: fn(&MetricRecord) -> f64| {
        svg::Series::new(
            kind,
            records
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| (r.iter as f64, f(r)))
                .collect(),
        )
    };
    for (name, title, f) in [
        ("loss.svg", "loss", (|r: &MetricRecord| r.loss) as fn(&MetricRecord) -> f64),
        ("accuracy.svg", "accuracy", |r: &MetricRecord| r.accuracy),
    ] {
        let chart = svg::line_chart(title, "iteration", title, &[series("train", f), series("eval", f)]);
        let path = dir.join(name);
        fs::write(&path, chart).runtime()?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_dataset(config: &Path, count: usize, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfigFile::load(config)?;
    let ds = classify(Dataset::generate(&cfg.task, seed.unwrap_or(cfg.train.seed), count))?;
    ds.save(out)
        .with_context(|| format!("writing {}", out.display()))
        .runtime()?;
    println!("{} examples -> {}", ds.len(), out.display());
    Ok(())
}

fn cmd_params(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfigFile::load(config)?;
    let net = classify(Network::new(&cfg.model, cfg.train.seed))?;
    for (name, value) in net.params().iter() {
        println!("{name:<24} {:>16} {:>10}", format!("{:?}", value.shape()), value.len());
    }
    println!("total {}", net.param_count());
    if let ModelConfig::Ctm(c) = &cfg.model {
        println!("closed form {}", classify(ctm_param_count(c))?);
    }
    Ok(())
}
