//! The Continuous Thought Machine.
//!
//! Each internal tick: the action synchronization of the current
//! post-activations forms an attention query; the attention output and the
//! post-activations feed the synapse model, whose output is pushed into the
//! pre-activation history; the neuron-level models turn that history into new
//! post-activations; the output synchronization of those is projected to
//! logits.

pub mod ablation;
mod attention;
mod backbone;
mod config;
mod ctm;
mod pairs;
mod synapse;
mod sync;

pub use attention::{CrossAttention, KeyValues};
pub use backbone::{patchify, sinusoidal_positions, Backbone};
pub use config::{BackboneConfig, CtmConfig, OutputSpec, Pairing, SyncMode, Variant};
pub use ctm::{ctm_param_count, Context, Ctm, CtmRun, CtmState, TickOutput};
pub use pairs::{build_pairs, build_pairs_for, PairSelection, Role};
pub use synapse::{synapse_param_count, synapse_widths, Synapse, BOTTLENECK};
pub use sync::{sync_direct, sync_recursive_step, SyncAccumulator, SyncReadout};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffArray, Tape};
use crate::error::Result;

/// Inverted dropout; identity when `rng` is `None` or `p == 0`.
pub(crate) fn dropout(tape: &mut Tape, x: &DiffArray, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<DiffArray> {
    let Some(rng) = rng else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = DiffArray::new(x.shape().to_vec(), mask)?;
    tape.mul(x, &mask)
}
