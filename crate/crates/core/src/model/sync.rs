//! Decay-weighted neuron synchronization.
//!
//! For a pair `(i, j)` with decay `r ≥ 0` after `t` ticks:
//!
//! ```text
//! S = Σ_τ e^{-r(t-τ)} z_i^τ z_j^τ / sqrt(Σ_τ e^{-r(t-τ)})
//! ```
//!
//! The recursive form keeps `α = Σ e^{-r(t-τ)} z_i z_j` and `β = Σ e^{-r(t-τ)}`
//! and updates both in O(1) per tick.

use crate::autodiff::{DiffArray, Tape};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Direct evaluation over the full history. `history[τ]` is `z` at tick `τ+1`.
pub fn sync_direct(history: &[Vec<f64>], pairs: &[(usize, usize)], decays: &[f64]) -> Result<Vec<f64>> {
    let t = history.len();
    if t == 0 {
        return Err(Error::InvalidArgument("synchronization of an empty history".into()));
    }
    if decays.len() != pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} decays for {} pairs",
            decays.len(),
            pairs.len()
        )));
    }
    pairs
        .iter()
        .zip(decays)
        .map(|(&(i, j), &r)| {
            if !(r >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative decay {r}")));
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (tau, z) in history.iter().enumerate() {
                let w = (-r * (t - 1 - tau) as f64).exp();
                num += w * z[i] * z[j];
                den += w;
            }
            Ok(num / den.sqrt())
        })
        .collect()
}

/// One recursive update. Start from `α = β = 0` before the first tick.
pub fn sync_recursive_step(alpha: f64, beta: f64, zi: f64, zj: f64, r: f64) -> Result<(f64, f64, f64)> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("corrupt synchronization state: beta = {beta}")));
    }
    let decay = (-r).exp();
    let alpha = decay * alpha + zi * zj;
    let beta = decay * beta + 1.0;
    Ok((alpha, beta, alpha / beta.sqrt()))
}

/// Running α (`[B×P]`) and β (`[P]`) for one readout.
#[derive(Clone, Debug)]
pub struct SyncAccumulator {
    pub alpha: DiffArray,
    pub beta: DiffArray,
}

/// A synchronization readout: fixed pairs plus one learnable raw decay per pair.
#[derive(Clone, Debug)]
pub struct SyncReadout {
    pub pairs: Vec<(usize, usize)>,
    left: Vec<usize>,
    right: Vec<usize>,
    pub decay_raw: ParamId,
}

impl SyncReadout {
    pub fn new(store: &mut ParamStore, name: &str, pairs: Vec<(usize, usize)>) -> Self {
        let decay_raw = store.add(format!("{name}.decay_raw"), DiffArray::zeros([pairs.len()]));
        Self {
            left: pairs.iter().map(|p| p.0).collect(),
            right: pairs.iter().map(|p| p.1).collect(),
            pairs,
            decay_raw,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Decay rates `r = max(raw, 0)`.
    pub fn rates(&self, tape: &mut Tape, params: &ParamStore) -> Result<DiffArray> {
        tape.clamp_min_zero(params.get(self.decay_raw))
    }

    fn products(&self, tape: &mut Tape, z: &DiffArray) -> Result<DiffArray> {
        let axis = z.rank() - 1;
        let zi = tape.index_select(z, axis, &self.left)?;
        let zj = tape.index_select(z, axis, &self.right)?;
        tape.mul(&zi, &zj)
    }

    /// Folds `z` (`[B×D]`) into the accumulator and returns `S` (`[B×P]`).
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        z: &DiffArray,
        acc: Option<SyncAccumulator>,
    ) -> Result<(DiffArray, SyncAccumulator)> {
        let prod = self.products(tape, z)?;
        let acc = match acc {
            None => SyncAccumulator {
                alpha: prod,
                beta: DiffArray::full([self.len()], 1.0),
            },
            Some(prev) => {
                let r = self.rates(tape, params)?;
                let neg = tape.neg(&r)?;
                let decay = tape.exp(&neg)?;
                let alpha = tape.mul(&prev.alpha, &decay)?;
                let alpha = tape.add(&alpha, &prod)?;
                let beta = tape.mul(&prev.beta, &decay)?;
                let beta = tape.add_scalar(&beta, 1.0)?;
                SyncAccumulator { alpha, beta }
            }
        };
        let s = self.normalize(tape, &acc)?;
        Ok((s, acc))
    }

    fn normalize(&self, tape: &mut Tape, acc: &SyncAccumulator) -> Result<DiffArray> {
        let root = tape.sqrt(&acc.beta)?;
        tape.div(&acc.alpha, &root)
    }

    /// Direct form over a history of `[B×D]` post-activations.
    pub fn direct(&self, tape: &mut Tape, params: &ParamStore, history: &[DiffArray]) -> Result<DiffArray> {
        let t = history.len();
        if t == 0 {
            return Err(Error::InvalidArgument("synchronization of an empty history".into()));
        }
        let r = self.rates(tape, params)?;
        let mut num: Option<DiffArray> = None;
        let mut den: Option<DiffArray> = None;
        for (tau, z) in history.iter().enumerate() {
            let lag = (t - 1 - tau) as f64;
            let scaled = tape.scale(&r, -lag)?;
            let w = tape.exp(&scaled)?;
            let prod = self.products(tape, z)?;
            let term = tape.mul(&prod, &w)?;
            num = Some(match num {
                None => term,
                Some(n) => tape.add(&n, &term)?,
            });
            den = Some(match den {
                None => w,
                Some(d) => tape.add(&d, &w)?,
            });
        }
        let acc = SyncAccumulator {
            alpha: num.expect("nonempty"),
            beta: den.expect("nonempty"),
        };
        self.normalize(tape, &acc)
    }
}
