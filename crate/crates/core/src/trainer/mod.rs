//! Seeded optimization loop with evaluation and checkpoints.

mod checkpoint;
mod eval;
mod optim;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, network_from_checkpoint, parse_checkpoint, save_checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use eval::{evaluate, predict, report, EvalReport, EvalSummary, HaltingReport, Predictions};
pub use optim::{clip_grad_norm, grad_norm, lr_schedule, AdamW, AdamWHyper, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{batch_loss, LossMode};
use crate::network::{check_compatible, ModelConfig, Network};
use crate::tasks::{batch_rng, Dataset, TaskBatch, TaskConfig};

/// Mixed into the run seed for dropout masks so they never share a stream
/// with batch generation.
const DROPOUT_SALT: u64 = 0xd1b5_4a32_d192_ed03;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.ckpt";

fn default_one() -> usize {
    1
}

fn default_eval_size() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    #[serde(default)]
    pub eval_interval: usize,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    #[serde(default = "default_one")]
    pub log_interval: usize,
    pub seed: u64,
    /// Defaults to the task's loss; LSTMs fall back to final-tick instead of
    /// two-tick.
    #[serde(default)]
    pub loss: Option<LossMode>,
    /// Stop once evaluation accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    /// Record elapsed seconds in the metric log (breaks byte-identical logs).
    #[serde(default)]
    pub log_wallclock: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.log_interval == 0 {
            return Err(Error::Config("iterations, batch_size and log_interval must be ≥ 1".into()));
        }
        if self.warmup >= self.iterations {
            return Err(Error::Config(format!(
                "warmup {} must be below iterations {}",
                self.warmup, self.iterations
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be ≥ 0".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if self.eval_size == 0 {
            return Err(Error::Config("eval_size must be ≥ 1".into()));
        }
        if self.target_accuracy.is_some_and(|a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Config("target_accuracy must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn loss_mode(&self, model: &ModelConfig, task: &TaskConfig) -> LossMode {
        resolve_loss(self.loss, model, task)
    }
}

/// An explicit mode wins; otherwise the task's loss, with LSTMs trained on
/// the final tick where the task would use two-tick selection.
pub fn resolve_loss(explicit: Option<LossMode>, model: &ModelConfig, task: &TaskConfig) -> LossMode {
    match (explicit, model, task.default_loss()) {
        (Some(m), _, _) => m,
        (None, ModelConfig::Lstm(_), LossMode::TwoTick) => LossMode::FinalTick,
        (None, _, m) => m,
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub wallclock: Option<f64>,
    /// `"train"` or `"eval"`.
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub accuracy: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
}

/// Forward, loss, backward, clip and one AdamW update.
pub fn train_step(
    network: &mut Network,
    optimizer: &mut AdamW,
    batch: &TaskBatch,
    mode: LossMode,
    lr: f64,
    grad_clip: Option<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<StepStats> {
    let mut tape = Tape::new();
    let attached = network.params().attach(&mut tape)?;
    let out = network.forward(&mut tape, &attached, &batch.input, rng)?;
    let loss = batch_loss(&mut tape, &out.logits, &batch.targets, network.output(), mode)?;
    let grads = tape.backward(&loss.loss)?;
    let mut g = attached.gradients(&grads)?;
    let norm = match grad_clip {
        Some(c) => clip_grad_norm(&mut g, c),
        None => grad_norm(&g),
    };
    optimizer.step(network.params_mut(), &g, lr)?;
    Ok(StepStats {
        loss: loss.value,
        accuracy: loss.accuracy,
        grad_norm: norm,
    })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub loss_mode: LossMode,
    pub records: Vec<MetricRecord>,
    /// Optimizer steps taken.
    pub iterations: usize,
    /// Best evaluation `(iter, accuracy)`.
    pub best: Option<(usize, f64)>,
    pub final_eval: EvalSummary,
    pub stopped_early: bool,
}

struct Sink {
    log: Option<BufWriter<fs::File>>,
    records: Vec<MetricRecord>,
}

impl Sink {
    fn push(&mut self, r: MetricRecord) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            serde_json::to_writer(&mut *w, &r)?;
            w.write_all(b"\n")?;
        }
        self.records.push(r);
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Trains `network` in place. With `out_dir`, writes the metric log and the
/// best, last and (on numeric failure) diagnostic checkpoints there.
pub fn train(network: &mut Network, task: &TaskConfig, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    config.validate()?;
    task.validate()?;
    let model = network.config();
    check_compatible(&model, task)?;
    let mode = config.loss_mode(&model, task);
    let hyper = AdamWHyper::with_decay(config.weight_decay);
    let mut optimizer = AdamW::new(network.params(), hyper);
    let eval_set = Dataset::generate(task, config.seed, config.eval_size)?;
    let eval_batch = config.batch_size.max(64);

    let mut sink = Sink {
        log: match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?))
            }
            None => None,
        },
        records: Vec::new(),
    };
    let meta_for = |net: &Network, iteration: usize, acc: Option<f64>| CheckpointMeta {
        task: Some(task.clone()),
        train: Some(config.clone()),
        optimizer: Some(hyper),
        iteration,
        eval_accuracy: acc,
        ..CheckpointMeta::for_network(net, config.seed)
    };
    let save = |net: &Network, name: &str, meta: CheckpointMeta| -> Result<()> {
        match out_dir {
            Some(dir) => save_checkpoint(&dir.join(name), net, &meta),
            None => Ok(()),
        }
    };

    let start = Instant::now();
    let clock = || config.log_wallclock.then(|| start.elapsed().as_secs_f64());
    let mut best: Option<(usize, f64)> = None;
    let mut final_eval = None;
    let mut stopped_early = false;
    let mut steps = 0;
    for i in 0..config.iterations {
        let lr = lr_schedule(i, config.lr, config.warmup, config.iterations);
        let batch = task.batch(config.seed, i as u64, config.batch_size)?;
        let mut rng = batch_rng(config.seed ^ DROPOUT_SALT, i as u64);
        let stats = match train_step(network, &mut optimizer, &batch, mode, lr, config.grad_clip, Some(&mut rng)) {
            Ok(s) => s,
            Err(e @ Error::NonFinite { .. }) => {
                sink.flush()?;
                save(network, DIAGNOSTIC_CHECKPOINT, meta_for(network, i, None))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        steps = i + 1;
        if i % config.log_interval == 0 || steps == config.iterations {
            sink.push(MetricRecord {
                iter: i,
                loss: stats.loss,
                accuracy: stats.accuracy,
                lr,
                wallclock: clock(),
                kind: "train".into(),
            })?;
        }
        let due = config.eval_interval > 0 && steps % config.eval_interval == 0;
        if due || steps == config.iterations {
            let summary = evaluate(network, &eval_set, mode, eval_batch)?;
            sink.push(MetricRecord {
                iter: i,
                loss: summary.loss,
                accuracy: summary.accuracy,
                lr,
                wallclock: clock(),
                kind: "eval".into(),
            })?;
            sink.flush()?;
            if best.is_none_or(|(_, a)| summary.accuracy > a) {
                best = Some((i, summary.accuracy));
                save(network, BEST_CHECKPOINT, meta_for(network, steps, Some(summary.accuracy)))?;
            }
            save(network, LAST_CHECKPOINT, meta_for(network, steps, Some(summary.accuracy)))?;
            let reached = config.target_accuracy.is_some_and(|t| summary.accuracy >= t);
            final_eval = Some(summary);
            if reached {
                stopped_early = steps < config.iterations;
                break;
            }
        }
    }
    sink.flush()?;
    Ok(TrainReport {
        loss_mode: mode,
        records: sink.records,
        iterations: steps,
        best,
        final_eval: final_eval.expect("the last iteration always evaluates"),
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CtmConfig;

    pub(crate) fn tiny_ctm(length: usize) -> ModelConfig {
        let cfg: CtmConfig = toml::from_str(&format!(
            r#"
            d_model = 16
            ticks = 4
            memory = 3
            synapse_depth = 1
            d_input = 8
            d_hidden = 4
            pairing = {{ kind = "dense", j_out = 6, j_action = 4 }}
            backbone = {{ kind = "tokens", seq_len = {length}, d_embed = 8 }}
            output = {{ positions = {length}, classes = 2 }}
            "#
        ))
        .unwrap();
        ModelConfig::Ctm(cfg)
    }

    fn train_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 16,
            lr: 3e-3,
            warmup: 10.min(iterations - 1),
            weight_decay: 0.0,
            grad_clip: Some(5.0),
            eval_interval: 0,
            eval_size: 32,
            log_interval: 1,
            seed: 7,
            loss: None,
            target_accuracy: None,
            log_wallclock: false,
        }
    }

    #[test]
    fn validation() {
        let mut c = train_config(10);
        c.warmup = 10;
        assert!(c.validate().is_err());
        let mut c = train_config(10);
        c.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = train_config(10);
        c.grad_clip = Some(-1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_log() {
        let task = TaskConfig::Parity { length: 4 };
        let run = || {
            let mut net = Network::new(&tiny_ctm(4), 7).unwrap();
            let dir = tempfile::tempdir().unwrap();
            train(&mut net, &task, &train_config(2), Some(dir.path())).unwrap();
            fs::read(dir.path().join(METRICS_FILE)).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_on_short_parity() {
        let task = TaskConfig::Parity { length: 4 };
        let mut net = Network::new(&tiny_ctm(4), 7).unwrap();
        let report = train(&mut net, &task, &train_config(200), None).unwrap();
        let train: Vec<f64> = report.records.iter().filter(|r| r.kind == "train").map(|r| r.loss).collect();
        let head = train[..20].iter().sum::<f64>() / 20.0;
        let tail = train[train.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail < head, "loss {head} → {tail}");
    }

    #[test]
    fn writes_artifacts_and_roundtrips() {
        let task = TaskConfig::Parity { length: 4 };
        let mut net = Network::new(&tiny_ctm(4), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = train_config(3);
        cfg.eval_interval = 2;
        let report = train(&mut net, &task, &cfg, Some(dir.path())).unwrap();
        assert_eq!(report.records.iter().filter(|r| r.kind == "eval").count(), 2);
        let (loaded, meta) = load_checkpoint(&dir.path().join(LAST_CHECKPOINT)).unwrap();
        assert!(loaded.params().bit_eq(net.params()));
        assert_eq!(meta.iteration, 3);
        assert_eq!(meta.optimizer.unwrap().beta2, ADAM_BETA2);
        assert!(dir.path().join(BEST_CHECKPOINT).exists());
        let log = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first["wallclock"], serde_json::Value::Null);
        assert_eq!(first["iter"], 0);
    }

    #[test]
    fn nan_aborts_with_diagnostic() {
        let task = TaskConfig::Parity { length: 4 };
        let mut net = Network::new(&tiny_ctm(4), 7).unwrap();
        let id = net.params().id("w_out.weight").unwrap();
        let shape = net.params().get(id).shape().to_vec();
        let n = shape.iter().product();
        net.params_mut()
            .set(id, crate::autodiff::DiffArray::new(shape, vec![f64::NAN; n]).unwrap())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = train(&mut net, &task, &train_config(3), Some(dir.path())).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        assert!(dir.path().join(DIAGNOSTIC_CHECKPOINT).exists());
    }

    #[test]
    fn clip_applies_in_step() {
        let task = TaskConfig::Parity { length: 4 };
        let mut net = Network::new(&tiny_ctm(4), 7).unwrap();
        let mut opt = AdamW::new(net.params(), AdamWHyper::with_decay(0.0));
        let batch = task.batch(1, 0, 8).unwrap();
        let stats = train_step(&mut net, &mut opt, &batch, LossMode::TwoTick, 1e-3, Some(1e-6), None).unwrap();
        assert!(stats.grad_norm > 1e-6);
        assert_eq!(opt.steps(), 1);
    }
}
