use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax_slice, Tape};
use crate::error::{Error, Result};
use crate::losses::{
    adaptive_halt, batch_loss, calibration_curve, certainty_from_logits, ctc_greedy_decode, Calibration, LossMode,
};
use crate::model::OutputSpec;
use crate::network::Network;
use crate::tasks::{wait_time_stats, Dataset, WaitStats};

/// Loss and accuracy over a frozen set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub loss: f64,
    pub accuracy: f64,
    /// Per-position accuracy at each tick (empty under CTC).
    pub tick_accuracy: Vec<f64>,
}

/// Per-example logits for every tick, `[E][T][P·C]`, with their targets.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub spec: OutputSpec,
    pub logits: Vec<Vec<Vec<f64>>>,
    pub targets: Vec<Vec<usize>>,
    pub inputs: Vec<Vec<f64>>,
    pub summary: EvalSummary,
}

/// Runs `network` over `dataset` in batches without dropout.
pub fn predict(network: &Network, dataset: &Dataset, mode: LossMode, batch_size: usize) -> Result<Predictions> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty evaluation set".into()));
    }
    let spec = network.output();
    let mut logits = Vec::with_capacity(dataset.len());
    let (mut loss, mut acc) = (0.0, 0.0);
    let mut tick_acc: Vec<f64> = Vec::new();
    for batch in dataset.batches(batch_size) {
        let batch = batch?;
        let mut tape = Tape::new();
        let out = network.forward(&mut tape, network.params(), &batch.input, None)?;
        let bl = batch_loss(&mut tape, &out.logits, &batch.targets, spec, mode)?;
        let n = batch.len() as f64;
        loss += bl.value * n;
        acc += bl.accuracy * n;
        tick_acc.resize(bl.tick_accuracy.len(), 0.0);
        for (t, a) in tick_acc.iter_mut().zip(&bl.tick_accuracy) {
            *t += a * n;
        }
        for b in 0..batch.len() {
            let w = spec.width();
            logits.push(out.logits.iter().map(|l| l.data()[b * w..(b + 1) * w].to_vec()).collect());
        }
    }
    let n = dataset.len() as f64;
    Ok(Predictions {
        spec,
        logits,
        targets: dataset.examples.iter().map(|e| e.target.clone()).collect(),
        inputs: dataset.examples.iter().map(|e| e.input.clone()).collect(),
        summary: EvalSummary {
            loss: loss / n,
            accuracy: acc / n,
            tick_accuracy: tick_acc.iter().map(|a| a / n).collect(),
        },
    })
}

pub fn evaluate(network: &Network, dataset: &Dataset, mode: LossMode, batch_size: usize) -> Result<EvalSummary> {
    Ok(predict(network, dataset, mode, batch_size)?.summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaltingReport {
    pub threshold: f64,
    /// Per-position accuracy at each example's halting tick.
    pub accuracy: f64,
    pub mean_tick: f64,
    /// `histogram[t]` examples halted at tick `t+1`.
    pub histogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub examples: usize,
    pub ticks: usize,
    pub loss_mode: LossMode,
    pub loss: f64,
    pub accuracy: f64,
    pub per_tick_accuracy: Vec<f64>,
    pub halting: Option<HaltingReport>,
    /// Reliability at the final tick over every (example, position).
    pub calibration: Option<Calibration>,
    /// Emission timing of greedy CTC decodes.
    pub wait_times: Option<WaitStats>,
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Halting, calibration and timing analyses of collected predictions.
pub fn report(model: &str, preds: &Predictions, mode: LossMode, threshold: f64, bins: usize) -> Result<EvalReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1]")));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let (p, c) = (preds.spec.positions, preds.spec.classes);
    let ticks = preds.logits.first().map_or(0, Vec::len);
    let mut out = EvalReport {
        model: model.into(),
        examples: preds.logits.len(),
        ticks,
        loss_mode: mode,
        loss: preds.summary.loss,
        accuracy: preds.summary.accuracy,
        per_tick_accuracy: preds.summary.tick_accuracy.clone(),
        halting: None,
        calibration: None,
        wait_times: None,
    };
    if mode == LossMode::Ctc {
        let seqs: Vec<_> = preds
            .logits
            .iter()
            .zip(&preds.inputs)
            .map(|(ex, input)| (ctc_greedy_decode(ex), input.clone()))
            .collect();
        out.wait_times = wait_time_stats(&seqs).ok();
        return Ok(out);
    }
    let mut histogram = vec![0usize; ticks];
    let mut halt_acc = 0.0;
    let mut halt_sum = 0usize;
    for (ex, target) in preds.logits.iter().zip(&preds.targets) {
        let certs: Vec<f64> = ex
            .iter()
            .map(|row| row.chunks(c).map(certainty_from_logits).sum::<f64>() / p as f64)
            .collect();
        let t = adaptive_halt(&certs, threshold)?;
        histogram[t - 1] += 1;
        halt_sum += t;
        let hits = ex[t - 1]
            .chunks(c)
            .zip(target)
            .filter(|(s, &y)| argmax_slice(s) == Some(y))
            .count();
        halt_acc += hits as f64 / p as f64;
    }
    let n = preds.logits.len() as f64;
    out.halting = Some(HaltingReport {
        threshold,
        accuracy: halt_acc / n,
        mean_tick: halt_sum as f64 / n,
        histogram,
    });
    let mut probs = Vec::with_capacity(preds.logits.len() * p);
    let mut labels = Vec::with_capacity(preds.logits.len() * p);
    for (ex, target) in preds.logits.iter().zip(&preds.targets) {
        for (pos, &y) in target.iter().enumerate() {
            probs.push(ex.iter().map(|row| softmax(&row[pos * c..(pos + 1) * c])).collect::<Vec<_>>());
            labels.push(y);
        }
    }
    out.calibration = Some(calibration_curve(&probs, &labels, ticks, bins)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::losses::reliability;

    fn logit_for(p: f64) -> Vec<f64> {
        // Two classes with softmax probability `p` on class 0.
        vec![(p / (1.0 - p)).ln(), 0.0]
    }

    #[test]
    fn report_matches_fixture_ece() {
        let confs = [(0.9, true), (0.8, false), (0.3, true), (0.6, true)];
        // A single-tick model whose confidence in class 0 is ≥ 0.5 predicts
        // class 0, otherwise class 1 with confidence 1 − p.
        let logits: Vec<Vec<Vec<f64>>> = confs.iter().map(|&(p, _)| vec![logit_for(f64::max(p, 0.5))]).collect();
        let targets: Vec<Vec<usize>> = confs.iter().map(|&(_, ok)| vec![usize::from(!ok)]).collect();
        let mut logits = logits;
        logits[2] = vec![logit_for(1.0 - 0.3)];
        let preds = Predictions {
            spec: OutputSpec {
                positions: 1,
                classes: 2,
            },
            logits,
            targets,
            inputs: vec![vec![]; 4],
            summary: EvalSummary {
                loss: 0.0,
                accuracy: 0.0,
                tick_accuracy: vec![],
            },
        };
        let r = report("toy", &preds, LossMode::TwoTick, 0.8, 2).unwrap();
        // Example 2 is 0.7 confident and right; the rest mirror the fixture.
        let expect = reliability(&[(0.9, true), (0.8, false), (0.7, true), (0.6, true)], 2).unwrap();
        assert_abs_diff_eq!(r.calibration.unwrap().ece, expect.ece, epsilon = 1e-12);
        assert!(report("toy", &preds, LossMode::TwoTick, 1.01, 2).is_err());
    }

    #[test]
    fn halting_histogram() {
        let preds = Predictions {
            spec: OutputSpec {
                positions: 1,
                classes: 2,
            },
            logits: vec![
                vec![vec![0.0, 0.0], vec![8.0, 0.0], vec![9.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.2, 0.0]],
            ],
            targets: vec![vec![0], vec![1]],
            inputs: vec![vec![]; 2],
            summary: EvalSummary {
                loss: 0.0,
                accuracy: 0.0,
                tick_accuracy: vec![],
            },
        };
        let h = report("toy", &preds, LossMode::TwoTick, 0.8, 10).unwrap().halting.unwrap();
        assert_eq!(h.histogram, vec![0, 1, 1]);
        assert_eq!(h.accuracy, 0.5);
        assert_eq!(h.mean_tick, 2.5);
    }
}
