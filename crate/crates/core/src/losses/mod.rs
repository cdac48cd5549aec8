//! Certainty, tick-selecting losses, the maze curriculum, CTC, calibration and
//! certainty-threshold halting.

mod batch;
mod calibration;
mod ctc;

pub use batch::{batch_loss, certainty_from_logits, tick_accuracy, BatchLoss, Targets};
pub use calibration::{calibration_curve, reliability, Calibration, ReliabilityBin};
pub use ctc::{ctc_greedy_decode, ctc_loss, ctc_loss_and_grad, ctc_min_ticks, log_softmax_rows};

use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax_slice, argmin_slice};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside the entropy.
pub const PROB_FLOOR: f64 = 1e-12;
/// Extra route steps beyond the correct prefix that the curriculum trains on.
pub const CURRICULUM_LOOKAHEAD: usize = 5;

/// Which ticks contribute to the training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Mean of the losses at the lowest-loss and the most-certain tick.
    #[default]
    TwoTick,
    FinalTick,
    /// Two-tick selection over losses masked to the correct prefix plus
    /// [`CURRICULUM_LOOKAHEAD`] steps.
    Curriculum,
    /// CTC over the sequence of per-tick outputs.
    Ctc,
}

/// `1 − H(p)/log C`, with `0·log 0 = 0` and entries floored at
/// [`PROB_FLOOR`] inside the log.
pub fn certainty(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument(format!("certainty needs ≥ 2 classes, got {}", p.len())));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("not a probability vector (sum {total})")));
    }
    Ok(certainty_unchecked(p))
}

pub(crate) fn certainty_unchecked(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.max(PROB_FLOOR).ln())
        .sum();
    1.0 - h / (p.len() as f64).ln()
}

/// Per-tick losses and certainties with the selected ticks (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickLossProfile {
    pub losses: Vec<f64>,
    pub certainties: Vec<f64>,
    /// Lowest-loss tick.
    pub t1: usize,
    /// Most-certain tick.
    pub t2: usize,
    pub loss: f64,
}

/// Picks `t1 = argmin L`, `t2 = argmax C` (first occurrence) and returns
/// `(L[t1] + L[t2]) / 2`.
pub fn ctm_loss(losses: &[f64], certainties: &[f64]) -> Result<TickLossProfile> {
    if losses.is_empty() || losses.len() != certainties.len() {
        return Err(Error::InvalidArgument(format!(
            "{} losses vs {} certainties",
            losses.len(),
            certainties.len()
        )));
    }
    if let Some(t) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite {
            what: "per-tick loss".into(),
            tick: t + 1,
        });
    }
    let t1 = argmin_slice(losses).expect("nonempty");
    let t2 = argmax_slice(certainties).unwrap_or(0);
    Ok(TickLossProfile {
        losses: losses.to_vec(),
        certainties: certainties.to_vec(),
        t1: t1 + 1,
        t2: t2 + 1,
        loss: (losses[t1] + losses[t2]) / 2.0,
    })
}

/// Positions trained on at one tick: the correctly predicted prefix plus
/// [`CURRICULUM_LOOKAHEAD`], capped at the route length.
pub fn curriculum_mask_len(predicted: &[usize], target: &[usize]) -> usize {
    let prefix = predicted
        .iter()
        .zip(target)
        .take_while(|(p, t)| p == t)
        .count();
    (prefix + CURRICULUM_LOOKAHEAD).min(target.len())
}

/// Diagnostics of a single-example curriculum loss.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumLoss {
    pub profile: TickLossProfile,
    /// Number of unmasked positions per tick.
    pub mask_lens: Vec<usize>,
}

/// Curriculum loss for one route: per tick, mean cross-entropy over the
/// first [`curriculum_mask_len`] positions, then two-tick selection.
///
/// `logits[t][p]` holds the class scores of position `p` at tick `t+1`.
pub fn maze_curriculum_loss(logits: &[Vec<Vec<f64>>], target: &[usize]) -> Result<CurriculumLoss> {
    let mut losses = Vec::with_capacity(logits.len());
    let mut certs = Vec::with_capacity(logits.len());
    let mut mask_lens = Vec::with_capacity(logits.len());
    for tick in logits {
        if tick.len() != target.len() {
            return Err(Error::InvalidArgument(format!(
                "{} route positions vs {} targets",
                tick.len(),
                target.len()
            )));
        }
        let lp = log_softmax_rows(tick);
        if let Some(&bad) = target.iter().find(|&&c| c >= tick[0].len()) {
            return Err(Error::InvalidArgument(format!("invalid route class {bad}")));
        }
        let predicted: Vec<usize> = tick.iter().map(|r| argmax_slice(r).unwrap_or(0)).collect();
        let n = curriculum_mask_len(&predicted, target);
        let loss = -(0..n).map(|p| lp[p][target[p]]).sum::<f64>() / n.max(1) as f64;
        let cert = lp
            .iter()
            .map(|r| certainty_unchecked(&r.iter().map(|v| v.exp()).collect::<Vec<_>>()))
            .sum::<f64>()
            / target.len() as f64;
        losses.push(loss);
        certs.push(cert);
        mask_lens.push(n);
    }
    Ok(CurriculumLoss {
        profile: ctm_loss(&losses, &certs)?,
        mask_lens,
    })
}

/// First tick (1-based) whose certainty reaches `threshold`; the final tick
/// if none does.
pub fn adaptive_halt(certainties: &[f64], threshold: f64) -> Result<usize> {
    if certainties.is_empty() {
        return Err(Error::InvalidArgument("empty certainty list".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1]")));
    }
    Ok(certainties
        .iter()
        .position(|&c| c >= threshold)
        .map_or(certainties.len(), |t| t + 1))
}
