//! LSTM and feed-forward baselines, and width search for parameter matching.

mod ff;
mod lstm;

pub use ff::{FeedForward, FeedForwardConfig};
pub use lstm::{lstm_cell, Lstm, LstmConfig, LstmTick};

use crate::error::{Error, Result};

/// Relative tolerance used when matching parameter budgets.
pub const MATCH_TOLERANCE: f64 = 0.02;

/// Smallest-error width in `1..=max_width` for a count that grows with width.
///
/// Fails with [`Error::BudgetUnreachable`] when even the closest width misses
/// `target` by more than `tolerance` (relative).
pub fn match_parameters<F>(count: F, target: usize, max_width: usize, tolerance: f64) -> Result<usize>
where
    F: Fn(usize) -> usize,
{
    if target == 0 || max_width == 0 {
        return Err(Error::InvalidArgument("parameter target and width bound must be ≥ 1".into()));
    }
    let (mut lo, mut hi) = (1usize, max_width);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if count(mid) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let gap = |w: usize| count(w).abs_diff(target);
    let best = if lo > 1 && gap(lo - 1) <= gap(lo) { lo - 1 } else { lo };
    let nearest = count(best);
    if nearest.abs_diff(target) as f64 > tolerance * target as f64 {
        return Err(Error::BudgetUnreachable {
            target,
            nearest,
            tolerance,
        });
    }
    Ok(best)
}
