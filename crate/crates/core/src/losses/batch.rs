//! Batched, differentiable versions of the losses.

use crate::autodiff::{argmax_slice, DiffArray, Tape};
use crate::error::{Error, Result};
use crate::model::OutputSpec;

use super::ctc::{ctc_greedy_decode, ctc_loss_and_grad};
use super::{certainty_unchecked, ctm_loss, curriculum_mask_len, LossMode};

/// Integer targets for a batch: `per_sample` labels per example, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Targets {
    pub labels: Vec<usize>,
    pub per_sample: usize,
}

impl Targets {
    pub fn new(labels: Vec<usize>, per_sample: usize) -> Result<Self> {
        if per_sample == 0 || labels.len() % per_sample != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} labels do not split into rows of {per_sample}",
                labels.len()
            )));
        }
        Ok(Self { labels, per_sample })
    }

    pub fn batch(&self) -> usize {
        self.labels.len() / self.per_sample
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.labels[b * self.per_sample..(b + 1) * self.per_sample]
    }
}

/// A batch loss with its per-example diagnostics.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    /// Scalar, tracked when the logits are.
    pub loss: DiffArray,
    pub value: f64,
    /// `[B][T]` per-tick losses (empty rows under CTC).
    pub tick_losses: Vec<Vec<f64>>,
    /// `[B][T]` mean positional certainty.
    pub certainties: Vec<Vec<f64>>,
    /// Per example `(t1, t2)`, 1-based; `(T, T)` for final-tick and CTC.
    pub selected: Vec<(usize, usize)>,
    /// Mean per-position accuracy at the reported tick (most certain tick
    /// under two-tick and curriculum, final tick otherwise; greedy-decoded
    /// sequence under CTC).
    pub accuracy: f64,
    /// Batch-mean per-position accuracy at every tick (empty under CTC).
    pub tick_accuracy: Vec<f64>,
}

/// Certainty of `softmax(logits)`.
pub fn certainty_from_logits(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / s).collect();
    certainty_unchecked(&p)
}

/// Per-example fraction of positions whose argmax equals the target.
pub fn tick_accuracy(logits: &DiffArray, targets: &Targets, spec: OutputSpec) -> Vec<f64> {
    let (p, c) = (spec.positions, spec.classes);
    logits
        .data()
        .chunks(p * c)
        .enumerate()
        .map(|(b, row)| {
            let hits = row
                .chunks(c)
                .zip(targets.row(b))
                .filter(|(scores, &t)| argmax_slice(scores) == Some(t))
                .count();
            hits as f64 / p as f64
        })
        .collect()
}

fn mean_certainties(logits: &DiffArray, spec: OutputSpec) -> Vec<f64> {
    logits
        .data()
        .chunks(spec.width())
        .map(|row| row.chunks(spec.classes).map(certainty_from_logits).sum::<f64>() / spec.positions as f64)
        .collect()
}

/// Per-example weighted negative log-likelihood `[B]`, weights `[B×P]`.
fn weighted_nll(tape: &mut Tape, logits: &DiffArray, targets: &Targets, spec: OutputSpec, weights: &[f64]) -> Result<DiffArray> {
    let b = targets.batch();
    let (p, c) = (spec.positions, spec.classes);
    let lg = tape.reshape(logits, &[b, p, c])?;
    let lp = tape.log_softmax(&lg, 2)?;
    let mut pick = vec![0.0; b * p * c];
    for (i, (&t, &w)) in targets.labels.iter().zip(weights).enumerate() {
        pick[i * c + t] = -w;
    }
    let picked = tape.mul(&lp, &DiffArray::new(vec![b, p, c], pick)?)?;
    let flat = tape.reshape(&picked, &[b, p * c])?;
    tape.sum(&flat, 1)
}

fn validate(logits: &[DiffArray], targets: &Targets, spec: OutputSpec, mode: LossMode) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("no ticks to score".into()));
    }
    let b = targets.batch();
    for l in logits {
        if l.shape() != [b, spec.width()] {
            return Err(Error::ShapeMismatch {
                op: "loss logits",
                lhs: l.shape().to_vec(),
                rhs: vec![b, spec.width()],
            });
        }
    }
    let bound = if mode == LossMode::Ctc { spec.classes - 1 } else { spec.classes };
    if let Some(&bad) = targets.labels.iter().find(|&&t| t >= bound) {
        return Err(Error::InvalidArgument(format!("target class {bad} out of range {bound}")));
    }
    if mode != LossMode::Ctc && targets.per_sample != spec.positions {
        return Err(Error::InvalidArgument(format!(
            "{} targets per example for {} output positions",
            targets.per_sample, spec.positions
        )));
    }
    if mode == LossMode::Ctc && spec.positions != 1 {
        return Err(Error::InvalidArgument("CTC expects one output position per tick".into()));
    }
    Ok(())
}

/// Loss over per-tick logits (`T` arrays of `[B×(P·C)]`).
pub fn batch_loss(
    tape: &mut Tape,
    logits: &[DiffArray],
    targets: &Targets,
    spec: OutputSpec,
    mode: LossMode,
) -> Result<BatchLoss> {
    validate(logits, targets, spec, mode)?;
    if mode == LossMode::Ctc {
        return ctc_batch(tape, logits, targets, spec);
    }
    let (b, t_len, p) = (targets.batch(), logits.len(), spec.positions);
    let certs_by_tick: Vec<Vec<f64>> = logits.iter().map(|l| mean_certainties(l, spec)).collect();
    let acc_by_tick: Vec<Vec<f64>> = logits.iter().map(|l| tick_accuracy(l, targets, spec)).collect();

    let mut per_tick = Vec::with_capacity(t_len);
    for l in logits {
        let weights: Vec<f64> = if mode == LossMode::Curriculum {
            let mut w = vec![0.0; b * p];
            for (bi, row) in l.data().chunks(spec.width()).enumerate() {
                let pred: Vec<usize> = row.chunks(spec.classes).map(|s| argmax_slice(s).unwrap_or(0)).collect();
                let n = curriculum_mask_len(&pred, targets.row(bi));
                w[bi * p..bi * p + n].fill(1.0 / n as f64);
            }
            w
        } else {
            vec![1.0 / p as f64; b * p]
        };
        let nll = weighted_nll(tape, l, targets, spec, &weights)?;
        per_tick.push(tape.reshape(&nll, &[b, 1])?);
    }
    let refs: Vec<&DiffArray> = per_tick.iter().collect();
    let stacked = tape.concat(&refs, 1)?;

    let tick_losses: Vec<Vec<f64>> = (0..b)
        .map(|bi| (0..t_len).map(|t| stacked.data()[bi * t_len + t]).collect())
        .collect();
    let certainties: Vec<Vec<f64>> = (0..b).map(|bi| (0..t_len).map(|t| certs_by_tick[t][bi]).collect()).collect();

    let mut select = vec![0.0; b * t_len];
    let mut selected = Vec::with_capacity(b);
    let mut accuracy = 0.0;
    for bi in 0..b {
        let (t1, t2) = match mode {
            LossMode::FinalTick => (t_len, t_len),
            _ => {
                let prof = ctm_loss(&tick_losses[bi], &certainties[bi])?;
                (prof.t1, prof.t2)
            }
        };
        select[bi * t_len + t1 - 1] += 0.5 / b as f64;
        select[bi * t_len + t2 - 1] += 0.5 / b as f64;
        selected.push((t1, t2));
        accuracy += acc_by_tick[t2 - 1][bi];
    }
    let weighted = tape.mul(&stacked, &DiffArray::new(vec![b, t_len], select)?)?;
    let loss = tape.sum_all(&weighted)?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "loss".into(),
            tick: 0,
        });
    }
    Ok(BatchLoss {
        loss,
        value,
        tick_losses,
        certainties,
        selected,
        accuracy: accuracy / b as f64,
        tick_accuracy: acc_by_tick.iter().map(|a| a.iter().sum::<f64>() / b as f64).collect(),
    })
}

fn ctc_batch(tape: &mut Tape, logits: &[DiffArray], targets: &Targets, spec: OutputSpec) -> Result<BatchLoss> {
    let (b, t_len, v) = (targets.batch(), logits.len(), spec.classes);
    let cols: Vec<DiffArray> = logits
        .iter()
        .map(|l| tape.reshape(l, &[b, 1, v]))
        .collect::<Result<_>>()?;
    let refs: Vec<&DiffArray> = cols.iter().collect();
    let seq = tape.concat(&refs, 1)?;

    let mut values = Vec::with_capacity(b);
    let mut local = Vec::with_capacity(b * t_len * v);
    let mut accuracy = 0.0;
    for (bi, block) in seq.data().chunks(t_len * v).enumerate() {
        let rows: Vec<Vec<f64>> = block.chunks(v).map(<[f64]>::to_vec).collect();
        let labels = targets.row(bi);
        let (l, g) = ctc_loss_and_grad(&rows, labels)?;
        values.push(l);
        local.extend(g.into_iter().flatten());
        let decoded: Vec<usize> = ctc_greedy_decode(&rows).into_iter().map(|(k, _)| k).collect();
        let hits = labels.iter().zip(&decoded).filter(|(a, b)| a == b).count();
        accuracy += hits as f64 / labels.len().max(1) as f64;
    }
    let per_sample = tape.record_blockwise(&seq, values, vec![b], local)?;
    let total = tape.sum_all(&per_sample)?;
    let loss = tape.scale(&total, 1.0 / b as f64)?;
    let value = loss.item()?;
    let certainties = (0..b)
        .map(|bi| {
            logits
                .iter()
                .map(|l| certainty_from_logits(&l.data()[bi * v..(bi + 1) * v]))
                .collect()
        })
        .collect();
    Ok(BatchLoss {
        loss,
        value,
        tick_losses: vec![Vec::new(); b],
        certainties,
        selected: vec![(t_len, t_len); b],
        accuracy: accuracy / b as f64,
        tick_accuracy: Vec::new(),
    })
}
