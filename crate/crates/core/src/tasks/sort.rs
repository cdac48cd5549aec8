use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SortInstance {
    pub values: Vec<f64>,
    /// Indices of `values` in ascending order.
    pub target: Vec<usize>,
}

/// Ascending argsort; ties keep the earlier index first.
pub fn stable_argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

pub fn sort_generate<R: Rng + ?Sized>(count: usize, mean: f64, std: f64, rng: &mut R) -> Result<SortInstance> {
    if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
        return Err(Error::InvalidArgument(format!("need finite mean and std > 0, got N({mean}, {std}²)")));
    }
    let dist = Normal::new(mean, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let values: Vec<f64> = (0..count).map(|_| dist.sample(rng)).collect();
    let target = stable_argsort(&values);
    Ok(SortInstance { values, target })
}

/// Emission timing of decoded sorting outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaitStats {
    /// Mean ticks waited before output `i`, over the sequences that emitted it.
    pub mean_wait: Vec<f64>,
    /// Number of sequences contributing to each index.
    pub counts: Vec<usize>,
    /// `(value[out_i] − value[out_{i−1}], wait_i)` for every `i ≥ 1`.
    pub pairs: Vec<(f64, f64)>,
    /// Pearson correlation over `pairs`; `None` when undefined.
    pub correlation: Option<f64>,
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// `sequences` holds, per example, the decoded `(index, tick)` emissions
/// (ticks 1-based) and the input values. The wait of output `i` is the tick
/// gap since output `i−1`, or since tick 0 for the first output.
pub fn wait_time_stats(sequences: &[(Vec<(usize, usize)>, Vec<f64>)]) -> Result<WaitStats> {
    let longest = sequences.iter().map(|(e, _)| e.len()).max().unwrap_or(0);
    if longest == 0 {
        return Err(Error::InvalidArgument("no emissions decoded".into()));
    }
    let mut sums = vec![0.0; longest];
    let mut counts = vec![0usize; longest];
    let mut pairs = Vec::new();
    for (emissions, values) in sequences {
        let mut prev_tick = 0;
        for (i, &(label, tick)) in emissions.iter().enumerate() {
            let wait = tick.checked_sub(prev_tick).filter(|&w| w > 0).ok_or_else(|| {
                Error::InvalidArgument(format!("emission ticks must increase, got {tick} after {prev_tick}"))
            })? as f64;
            sums[i] += wait;
            counts[i] += 1;
            if i > 0 {
                let prev = emissions[i - 1].0;
                let (Some(a), Some(b)) = (values.get(prev), values.get(label)) else {
                    return Err(Error::InvalidArgument(format!("emitted index {label} outside the input")));
                };
                pairs.push((b - a, wait));
            }
            prev_tick = tick;
        }
    }
    Ok(WaitStats {
        mean_wait: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        counts,
        correlation: pearson(&pairs),
        pairs,
    })
}
