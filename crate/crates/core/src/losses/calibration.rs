use serde::{Deserialize, Serialize};

use crate::autodiff::argmax_slice;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence of the examples in the bin (0 when empty).
    pub confidence: f64,
    /// Fraction correct in the bin (0 when empty).
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

/// Reliability binning of `(confidence, correct)` pairs into `n_bins` equal
/// bins over `[0, 1]`; the last bin is closed on the right.
pub fn reliability(points: &[(f64, bool)], n_bins: usize) -> Result<Calibration> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {n_bins}")));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); n_bins];
    for &(conf, correct) in points {
        let idx = ((conf * n_bins as f64).floor() as usize).min(n_bins - 1);
        let b = &mut sums[idx];
        b.0 += 1;
        b.1 += conf;
        b.2 += usize::from(correct);
    }
    let n = points.len() as f64;
    let mut ece = 0.0;
    let bins = sums
        .iter()
        .enumerate()
        .map(|(i, &(count, conf_sum, hits))| {
            let (confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum / count as f64, hits as f64 / count as f64)
            };
            ece += count as f64 / n * (confidence - accuracy).abs();
            ReliabilityBin {
                lower: i as f64 / n_bins as f64,
                upper: (i + 1) as f64 / n_bins as f64,
                count,
                confidence,
                accuracy,
            }
        })
        .collect();
    Ok(Calibration { bins, ece })
}

/// Calibration at tick `tick` (1-based). `probs[e][t]` is the class
/// distribution of example `e` at tick `t+1`. The prediction is the argmax at
/// `tick`; its confidence is that class's probability averaged over ticks
/// `1..=tick`.
pub fn calibration_curve(probs: &[Vec<Vec<f64>>], labels: &[usize], tick: usize, n_bins: usize) -> Result<Calibration> {
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} examples but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let points = probs
        .iter()
        .zip(labels)
        .map(|(ticks, &label)| {
            if tick == 0 || tick > ticks.len() {
                return Err(Error::InvalidArgument(format!("tick {tick} outside 1..={}", ticks.len())));
            }
            let pred = argmax_slice(&ticks[tick - 1]).unwrap_or(0);
            let conf = ticks[..tick].iter().map(|p| p[pred]).sum::<f64>() / tick as f64;
            Ok((conf, pred == label))
        })
        .collect::<Result<Vec<_>>>()?;
    reliability(&points, n_bins)
}
