use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffArray, Tape};
use crate::error::{Error, Result};
use crate::params::{uniform, uniform_fan_in, Linear, ParamId, ParamStore};

use super::attention::{CrossAttention, KeyValues};
use super::backbone::Backbone;
use super::config::{CtmConfig, SyncMode};
use super::pairs::{build_pairs, PairSelection};
use super::synapse::{synapse_param_count, Synapse};
use super::sync::{SyncAccumulator, SyncReadout};

/// Scale applied to the second NLM layer at initialization.
const NLM_OUT_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
struct NlmBank {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// A built Continuous Thought Machine: configuration, fixed pair selections and
/// parameters.
#[derive(Clone, Debug)]
pub struct Ctm {
    pub config: CtmConfig,
    pub params: ParamStore,
    pub out_pairs: PairSelection,
    pub action_pairs: PairSelection,
    backbone: Backbone,
    attention: Option<CrossAttention>,
    synapse: Synapse,
    nlm: Option<NlmBank>,
    z_init: ParamId,
    history_init: Option<ParamId>,
    sync_out: Option<SyncReadout>,
    sync_action: Option<SyncReadout>,
    w_in: Option<Linear>,
    w_out: Linear,
}

/// Per-sequence recurrent state.
#[derive(Clone, Debug)]
pub struct CtmState {
    /// Current post-activations `[B×D]`.
    pub z: DiffArray,
    /// The `M` most recent pre-activations `[B×D×M]`, oldest first.
    pub pre_history: Option<DiffArray>,
    pub out_acc: Option<SyncAccumulator>,
    pub action_acc: Option<SyncAccumulator>,
    /// Every post-activation so far, `z¹` first.
    pub z_history: Vec<DiffArray>,
    /// Ticks completed.
    pub tick: usize,
}

/// What the ticks attend to.
#[derive(Clone, Debug)]
pub enum Context {
    Attention(KeyValues),
    /// Used as the attention output directly.
    Direct(DiffArray),
}

/// Everything produced by one internal tick.
#[derive(Clone, Debug)]
pub struct TickOutput {
    /// `[B×(positions·classes)]`.
    pub logits: DiffArray,
    /// `[B×H×L]`.
    pub attention: Option<DiffArray>,
    /// Attention output `o` `[B×d_input]`.
    pub attended: DiffArray,
    /// Pre-activations `[B×D]`.
    pub pre: DiffArray,
    /// New post-activations `[B×D]`.
    pub z: DiffArray,
    /// Synchronization read by the output head, `[B×P_out]`.
    pub sync_out: Option<DiffArray>,
    /// Synchronization used to form the query, `[B×P_action]`.
    pub sync_action: Option<DiffArray>,
}

/// A full forward pass.
#[derive(Clone, Debug)]
pub struct CtmRun {
    pub ticks: Vec<TickOutput>,
    /// `z¹ … z^{T+1}`. The action readout at tick `t` covers `z¹…z^t`; the
    /// output readout covers `z²…z^{t+1}`.
    pub z_history: Vec<DiffArray>,
}

/// Closed-form parameter count for `config`.
pub fn ctm_param_count(config: &CtmConfig) -> Result<usize> {
    config.validate()?;
    let (d, m, h, d_in) = (config.d_model, config.memory, config.d_hidden, config.d_input);
    let attention = config.backbone.uses_attention();
    let classes = config.output.width();
    let mut n = Backbone::param_count(&config.backbone, d_in);
    if attention {
        n += CrossAttention::param_count(d_in);
    }
    n += synapse_param_count(d + d_in, d, config.effective_depth())?;
    if config.has_nlm() {
        n += d * m * h + d * h + d * h + d + d * m;
    }
    n += d;
    if config.has_sync() {
        let (p_out, p_action) = config.pairing.counts();
        n += Linear::param_count(p_out, classes) + p_out;
        if attention {
            n += Linear::param_count(p_action, d_in) + p_action;
        }
    } else {
        n += Linear::param_count(d, classes);
        if attention {
            n += Linear::param_count(d, d_in);
        }
    }
    Ok(n)
}

impl Ctm {
    /// Builds a CTM, sampling pairs and initial parameters from `seed`.
    pub fn new(config: CtmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (out, action) = build_pairs(&config, seed)?;
        Self::with_pairs(config, out, action, seed)
    }

    /// Builds a CTM around given pair selections.
    pub fn with_pairs(config: CtmConfig, out_pairs: PairSelection, action_pairs: PairSelection, seed: u64) -> Result<Self> {
        config.validate()?;
        let (p_out, p_action) = config.pairing.counts();
        if config.has_sync() && (out_pairs.len() != p_out || action_pairs.len() != p_action) {
            return Err(Error::Config(format!(
                "pair selections of size ({}, {}) do not match pairing ({p_out}, {p_action})",
                out_pairs.len(),
                action_pairs.len()
            )));
        }
        let d = config.d_model;
        if out_pairs.pairs.iter().chain(&action_pairs.pairs).any(|&(i, j)| i >= d || j >= d) {
            return Err(Error::Config(format!("pair index out of range for d_model {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut store = ParamStore::new();
        let attention_used = config.backbone.uses_attention();
        let (m, h, d_in) = (config.memory, config.d_hidden, config.d_input);

        let backbone = Backbone::new(&mut store, &config.backbone, d_in, &mut rng)?;
        let attention = if attention_used {
            Some(CrossAttention::new(&mut store, "attention", d_in, config.n_heads, &mut rng)?)
        } else {
            None
        };
        let synapse = Synapse::new(
            &mut store,
            "synapse",
            d + d_in,
            d,
            config.effective_depth(),
            config.activation,
            config.dropout,
            &mut rng,
        )?;
        let (nlm, history_init) = if config.has_nlm() {
            let bank = NlmBank {
                w1: store.add("nlm.w1", uniform_fan_in(&mut rng, &[d, m, h], m)),
                b1: store.add("nlm.b1", uniform_fan_in(&mut rng, &[d, h], m)),
                w2: store.add(
                    "nlm.w2",
                    uniform(&mut rng, &[d, h], NLM_OUT_INIT_SCALE / (h as f64).sqrt()),
                ),
                b2: store.add("nlm.b2", uniform(&mut rng, &[d], NLM_OUT_INIT_SCALE / (h as f64).sqrt())),
            };
            let hist = store.add("init.pre_history", uniform_fan_in(&mut rng, &[d, m], d + m));
            (Some(bank), Some(hist))
        } else {
            (None, None)
        };
        let z_init = store.add("init.z", uniform_fan_in(&mut rng, &[d], d));
        let classes = config.output.width();
        let (sync_out, sync_action, w_in, w_out) = if config.has_sync() {
            let so = SyncReadout::new(&mut store, "sync_out", out_pairs.pairs.clone());
            let sa = attention_used.then(|| SyncReadout::new(&mut store, "sync_action", action_pairs.pairs.clone()));
            let w_in = attention_used.then(|| Linear::new(&mut store, "w_in", p_action, d_in, &mut rng));
            let w_out = Linear::new(&mut store, "w_out", p_out, classes, &mut rng);
            (Some(so), sa, w_in, w_out)
        } else {
            let w_in = attention_used.then(|| Linear::new(&mut store, "w_in", d, d_in, &mut rng));
            let w_out = Linear::new(&mut store, "w_out", d, classes, &mut rng);
            (None, None, w_in, w_out)
        };
        Ok(Self {
            config,
            params: store,
            out_pairs,
            action_pairs,
            backbone,
            attention,
            synapse,
            nlm,
            z_init,
            history_init,
            sync_out,
            sync_action,
            w_in,
            w_out,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Runs the backbone and projects keys/values once per forward pass.
    pub fn context(&self, tape: &mut Tape, params: &ParamStore, input: &DiffArray) -> Result<Context> {
        let features = self.backbone.forward(tape, params, input)?;
        match &self.attention {
            Some(att) => Ok(Context::Attention(att.project(tape, params, &features)?)),
            None => Ok(Context::Direct(features)),
        }
    }

    /// Fresh state for a batch of `batch` sequences.
    pub fn init_state(&self, tape: &mut Tape, params: &ParamStore, batch: usize) -> Result<CtmState> {
        let d = self.config.d_model;
        let z = tape.add(&DiffArray::zeros([batch, d]), params.get(self.z_init))?;
        let pre_history = match self.history_init {
            Some(id) => Some(tape.add(&DiffArray::zeros([batch, d, self.config.memory]), params.get(id))?),
            None => None,
        };
        Ok(CtmState {
            z_history: vec![z.clone()],
            z,
            pre_history,
            out_acc: None,
            action_acc: None,
            tick: 0,
        })
    }

    fn readout(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        readout: &SyncReadout,
        z: &DiffArray,
        acc: &mut Option<SyncAccumulator>,
        history: &[DiffArray],
    ) -> Result<DiffArray> {
        match self.config.sync_mode {
            SyncMode::Recursive => {
                let (s, next) = readout.step(tape, params, z, acc.take())?;
                *acc = Some(next);
                Ok(s)
            }
            SyncMode::Direct => readout.direct(tape, params, history),
        }
    }

    /// One internal tick.
    pub fn tick(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        state: &mut CtmState,
        context: &Context,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TickOutput> {
        if state.tick >= self.config.ticks {
            return Err(Error::TickOverflow {
                tick: state.tick,
                max: self.config.ticks,
            });
        }
        let tick = state.tick + 1;
        let check = |what: &str, x: &DiffArray| {
            if x.all_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite {
                    what: what.to_string(),
                    tick,
                })
            }
        };

        // (a)-(c): query from the action synchronization of the current z, then attend.
        let (attended, attention, sync_action) = match context {
            Context::Direct(x) => (x.clone(), None, None),
            Context::Attention(kv) => {
                let (q_src, sync_action) = match &self.sync_action {
                    Some(ro) => {
                        let s = self.readout(tape, params, ro, &state.z, &mut state.action_acc, &state.z_history)?;
                        (s.clone(), Some(s))
                    }
                    None => (state.z.clone(), None),
                };
                let w_in = self.w_in.as_ref().expect("attention models project queries");
                let q = w_in.forward(tape, params, &q_src)?;
                let att = self.attention.as_ref().expect("attention context");
                let (o, weights) = att.attend(tape, params, &q, kv)?;
                (o, Some(weights), sync_action)
            }
        };

        // (d) synapse.
        let syn_in = tape.concat(&[&state.z, &attended], 1)?;
        let pre = self.synapse.forward(tape, params, &syn_in, rng.as_deref_mut())?;
        check("pre-activations", &pre)?;

        // (e)-(f) history FIFO and neuron-level models.
        let z = match (&self.nlm, &state.pre_history) {
            (Some(nlm), Some(hist)) => {
                let (b, d, m) = (hist.shape()[0], hist.shape()[1], hist.shape()[2]);
                let newest = tape.reshape(&pre, &[b, d, 1])?;
                let hist = if m > 1 {
                    let kept = tape.slice(hist, 2, 1, m - 1)?;
                    tape.concat(&[&kept, &newest], 2)?
                } else {
                    newest
                };
                let z = tape.batched_nlm_contract(
                    &hist,
                    params.get(nlm.w1),
                    params.get(nlm.b1),
                    params.get(nlm.w2),
                    params.get(nlm.b2),
                    self.config.activation,
                )?;
                state.pre_history = Some(hist);
                z
            }
            _ => pre.clone(),
        };
        check("post-activations", &z)?;
        state.z_history.push(z.clone());

        // (g)-(h) output synchronization and readout.
        let sync_out = match &self.sync_out {
            Some(ro) => Some(self.readout(tape, params, ro, &z, &mut state.out_acc, &state.z_history[1..])?),
            None => None,
        };
        let features = sync_out.as_ref().unwrap_or(&z);
        let logits = self.w_out.forward(tape, params, features)?;
        check("outputs", &logits)?;

        state.z = z.clone();
        state.tick = tick;
        Ok(TickOutput {
            logits,
            attention,
            attended,
            pre,
            z,
            sync_out,
            sync_action,
        })
    }

    /// Backbone once, then all `T` ticks.
    pub fn run(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        input: &DiffArray,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<CtmRun> {
        let context = self.context(tape, params, input)?;
        let mut state = self.init_state(tape, params, input.shape()[0])?;
        let ticks = (0..self.config.ticks)
            .map(|_| self.tick(tape, params, &mut state, &context, rng.as_deref_mut()))
            .collect::<Result<Vec<_>>>()?;
        Ok(CtmRun {
            ticks,
            z_history: state.z_history,
        })
    }

    /// Current decay rates `(output, action)`.
    pub fn decay_rates(&self) -> (Vec<f64>, Vec<f64>) {
        let rates = |ro: &Option<SyncReadout>| {
            ro.as_ref()
                .map(|r| self.params.get(r.decay_raw).data().iter().map(|v| v.max(0.0)).collect())
                .unwrap_or_default()
        };
        (rates(&self.sync_out), rates(&self.sync_action))
    }
}
