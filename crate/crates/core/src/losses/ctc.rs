//! Connectionist temporal classification over internal ticks. The blank
//! symbol is the last class.

use crate::error::{Error, Result};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Row-wise log-softmax of `T×V` logits.
pub fn log_softmax_rows(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter().map(|v| v - lse).collect()
        })
        .collect()
}

/// Ticks needed to emit `labels`: one per label plus a blank between repeats.
pub fn ctc_min_ticks(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check(log_probs: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    let t = log_probs.len();
    let v = log_probs.first().map_or(0, Vec::len);
    if t == 0 || v < 2 || log_probs.iter().any(|r| r.len() != v) {
        return Err(Error::InvalidArgument("CTC needs T ≥ 1 rows of ≥ 2 classes".into()));
    }
    let blank = v - 1;
    if let Some(&bad) = labels.iter().find(|&&l| l >= blank) {
        return Err(Error::InvalidArgument(format!("CTC label {bad} is not below the blank id {blank}")));
    }
    let needed = ctc_min_ticks(labels);
    if needed > t {
        return Err(Error::CtcInfeasible {
            label_len: labels.len(),
            needed,
            ticks: t,
        });
    }
    Ok(blank)
}

fn extended(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

fn skip_allowed(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Log-space forward variables `α[t][s]` over the blank-augmented label.
fn alphas(lp: &[Vec<f64>], ext: &[usize], blank: usize) -> Vec<Vec<f64>> {
    let (t_len, s_len) = (lp.len(), ext.len());
    let mut a = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    a[0][0] = lp[0][ext[0]];
    if s_len > 1 {
        a[0][1] = lp[0][ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = a[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, a[t - 1][s - 1]);
            }
            if skip_allowed(ext, s, blank) {
                acc = log_add(acc, a[t - 1][s - 2]);
            }
            a[t][s] = acc + lp[t][ext[s]];
        }
    }
    a
}

/// Log-space backward variables, excluding the emission at `t`.
fn betas(lp: &[Vec<f64>], ext: &[usize], blank: usize) -> Vec<Vec<f64>> {
    let (t_len, s_len) = (lp.len(), ext.len());
    let mut b = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    b[t_len - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        b[t_len - 1][s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = b[t + 1][s] + lp[t + 1][ext[s]];
            if s + 1 < s_len {
                acc = log_add(acc, b[t + 1][s + 1] + lp[t + 1][ext[s + 1]]);
            }
            if s + 2 < s_len && skip_allowed(ext, s + 2, blank) {
                acc = log_add(acc, b[t + 1][s + 2] + lp[t + 1][ext[s + 2]]);
            }
            b[t][s] = acc;
        }
    }
    b
}

fn log_likelihood(a: &[Vec<f64>], s_len: usize) -> f64 {
    let last = a.last().expect("T ≥ 1");
    if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    }
}

/// `−log P(labels | logits)` for `T×V` logits.
pub fn ctc_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let blank = check(logits, labels)?;
    let lp = log_softmax_rows(logits);
    let ext = extended(labels, blank);
    let a = alphas(&lp, &ext, blank);
    Ok(-log_likelihood(&a, ext.len()))
}

/// Loss and its gradient with respect to the logits.
pub fn ctc_loss_and_grad(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    let blank = check(logits, labels)?;
    let lp = log_softmax_rows(logits);
    let ext = extended(labels, blank);
    let a = alphas(&lp, &ext, blank);
    let b = betas(&lp, &ext, blank);
    let ll = log_likelihood(&a, ext.len());
    let grad = lp
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let mut g: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            for (s, &k) in ext.iter().enumerate() {
                let occ = a[t][s] + b[t][s] - ll;
                if occ > f64::NEG_INFINITY {
                    g[k] -= occ.exp();
                }
            }
            g
        })
        .collect();
    Ok((-ll, grad))
}

/// Best-path decoding: per-tick argmax, repeats merged, blanks dropped.
/// Returns `(label, tick)` pairs with 1-based emission ticks.
pub fn ctc_greedy_decode(logits: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let Some(v) = logits.first().map(Vec::len) else {
        return Vec::new();
    };
    let blank = v.saturating_sub(1);
    let mut out = Vec::new();
    let mut prev = blank;
    for (t, row) in logits.iter().enumerate() {
        let k = crate::autodiff::argmax_slice(row).unwrap_or(blank);
        if k != blank && k != prev {
            out.push((k, t + 1));
        }
        prev = k;
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Sums the probability of every path that collapses to `labels`.
    fn enumerate(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
        let probs: Vec<Vec<f64>> = log_softmax_rows(logits)
            .iter()
            .map(|r| r.iter().map(|v| v.exp()).collect())
            .collect();
        let (t, v) = (probs.len(), probs[0].len());
        let blank = v - 1;
        let mut total = 0.0;
        for code in 0..v.pow(t as u32) {
            let mut c = code;
            let path: Vec<usize> = (0..t)
                .map(|_| {
                    let k = c % v;
                    c /= v;
                    k
                })
                .collect();
            let mut collapsed = Vec::new();
            let mut prev = None;
            for &k in &path {
                if Some(k) != prev && k != blank {
                    collapsed.push(k);
                }
                prev = Some(k);
            }
            if collapsed == labels {
                total += path.iter().enumerate().map(|(i, &k)| probs[i][k]).product::<f64>();
            }
        }
        -total.ln()
    }

    #[test]
    fn single_tick() {
        let logits = vec![vec![0.3, -1.0, 2.0]];
        let lp = log_softmax_rows(&logits);
        assert_abs_diff_eq!(ctc_loss(&logits, &[0]).unwrap(), -lp[0][0], epsilon = 1e-14);
    }

    #[test]
    fn two_ticks_three_alignments() {
        let logits = vec![vec![0.5, 1.5], vec![-0.2, 0.7]];
        let p: Vec<Vec<f64>> = log_softmax_rows(&logits)
            .iter()
            .map(|r| r.iter().map(|v| v.exp()).collect())
            .collect();
        let expect = -(p[0][0] * p[1][0] + p[0][0] * p[1][1] + p[0][1] * p[1][0]).ln();
        assert_abs_diff_eq!(ctc_loss(&logits, &[0]).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn uniform_four_ticks() {
        let logits = vec![vec![0.0; 3]; 4];
        for labels in [[0, 1], [1, 1], [0, 0]] {
            assert_abs_diff_eq!(
                ctc_loss(&logits, &labels).unwrap(),
                enumerate(&logits, &labels),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn matches_enumeration_on_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let v = rng.random_range(2..=3);
            let t = rng.random_range(1..=4);
            let s = rng.random_range(0..=2.min(t));
            let labels: Vec<usize> = (0..s).map(|_| rng.random_range(0..v - 1)).collect();
            let logits: Vec<Vec<f64>> = (0..t).map(|_| (0..v).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            match ctc_loss(&logits, &labels) {
                Ok(l) => assert_abs_diff_eq!(l, enumerate(&logits, &labels), epsilon = 1e-10),
                Err(Error::CtcInfeasible { .. }) => assert!(enumerate(&logits, &labels).is_infinite()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10 {
            let logits: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let labels = [2, 0, 0];
            let (_, g) = ctc_loss_and_grad(&logits, &labels).unwrap();
            for t in 0..5 {
                for k in 0..4 {
                    let mut up = logits.clone();
                    up[t][k] += 1e-6;
                    let mut dn = logits.clone();
                    dn[t][k] -= 1e-6;
                    let fd = (ctc_loss(&up, &labels).unwrap() - ctc_loss(&dn, &labels).unwrap()) / 2e-6;
                    assert_abs_diff_eq!(g[t][k], fd, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn infeasible_and_invalid() {
        let logits = vec![vec![0.0; 3]; 2];
        assert!(matches!(
            ctc_loss(&logits, &[1, 1]),
            Err(Error::CtcInfeasible { needed: 3, ticks: 2, .. })
        ));
        assert!(ctc_loss(&logits, &[2]).is_err());
        assert_eq!(ctc_min_ticks(&[3, 3, 1, 1, 1]), 8);
    }

    #[test]
    fn greedy_decode_emissions() {
        let b = 3;
        let row = |k: usize| {
            let mut r = vec![0.0; 4];
            r[k] = 5.0;
            r
        };
        let logits = vec![row(1), row(1), row(b), row(1), row(2), row(b)];
        assert_eq!(ctc_greedy_decode(&logits), vec![(1, 1), (1, 4), (2, 5)]);
    }
}
