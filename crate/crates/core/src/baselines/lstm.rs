use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffArray, Tape};
use crate::error::{Error, Result};
use crate::model::{
    build_pairs_for, Backbone, BackboneConfig, Context, CrossAttention, OutputSpec, PairSelection, Pairing,
    SyncAccumulator, SyncReadout,
};
use crate::params::{Linear, ParamStore};

fn one() -> usize {
    1
}

/// Recurrent baseline unrolled over the same internal ticks as a CTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    #[serde(default = "one")]
    pub layers: usize,
    pub ticks: usize,
    pub d_input: usize,
    #[serde(default = "one")]
    pub n_heads: usize,
    pub backbone: BackboneConfig,
    pub output: OutputSpec,
    /// Read queries and outputs through synchronization of the top-layer
    /// hidden states instead of the hidden state itself.
    #[serde(default)]
    pub sync: Option<Pairing>,
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.ticks == 0 || self.d_input == 0 {
            return Err(Error::Config("hidden, layers, ticks and d_input must be ≥ 1".into()));
        }
        if self.output.positions == 0 || self.output.classes == 0 {
            return Err(Error::Config("output positions and classes must be ≥ 1".into()));
        }
        self.backbone.validate(self.d_input)?;
        if self.backbone.uses_attention() && (self.n_heads == 0 || self.d_input % self.n_heads != 0) {
            return Err(Error::Config(format!(
                "{} heads do not divide d_input {}",
                self.n_heads, self.d_input
            )));
        }
        if let Some(p) = &self.sync {
            let (o, a) = p.counts();
            if o == 0 || (self.backbone.uses_attention() && a == 0) {
                return Err(Error::Config("pairing selects no pairs".into()));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let attention = self.backbone.uses_attention();
        let h = self.hidden;
        let mut n = Backbone::param_count(&self.backbone, self.d_input);
        if attention {
            n += CrossAttention::param_count(self.d_input);
        }
        for layer in 0..self.layers {
            let input = if layer == 0 { self.d_input } else { h };
            n += Linear::param_count(input + h, 4 * h);
        }
        let classes = self.output.width();
        match &self.sync {
            Some(p) => {
                let (po, pa) = p.counts();
                n += Linear::param_count(po, classes) + po;
                if attention {
                    n += Linear::param_count(pa, self.d_input) + pa;
                }
            }
            None => {
                n += Linear::param_count(h, classes);
                if attention {
                    n += Linear::param_count(h, self.d_input);
                }
            }
        }
        n
    }
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub config: LstmConfig,
    pub params: ParamStore,
    pub pairs: Option<(PairSelection, PairSelection)>,
    backbone: Backbone,
    attention: Option<CrossAttention>,
    cells: Vec<Linear>,
    sync_out: Option<SyncReadout>,
    sync_action: Option<SyncReadout>,
    w_in: Option<Linear>,
    w_out: Linear,
}

/// Per-tick results.
#[derive(Clone, Debug)]
pub struct LstmTick {
    pub logits: DiffArray,
    pub attention: Option<DiffArray>,
    /// Top-layer hidden state `[B×H]`.
    pub hidden: DiffArray,
}

/// One LSTM cell step. `gates = [x, h]·W + b` split as input, forget,
/// candidate, output.
pub fn lstm_cell(
    tape: &mut Tape,
    params: &ParamStore,
    cell: &Linear,
    x: &DiffArray,
    h: &DiffArray,
    c: &DiffArray,
) -> Result<(DiffArray, DiffArray)> {
    let width = h.shape()[1];
    let xh = tape.concat(&[x, h], 1)?;
    let gates = cell.forward(tape, params, &xh)?;
    let i = tape.slice(&gates, 1, 0, width)?;
    let f = tape.slice(&gates, 1, width, width)?;
    let g = tape.slice(&gates, 1, 2 * width, width)?;
    let o = tape.slice(&gates, 1, 3 * width, width)?;
    let i = tape.sigmoid(&i)?;
    let f = tape.sigmoid(&f)?;
    let g = tape.tanh(&g)?;
    let o = tape.sigmoid(&o)?;
    let keep = tape.mul(&f, c)?;
    let write = tape.mul(&i, &g)?;
    let c = tape.add(&keep, &write)?;
    let tc = tape.tanh(&c)?;
    let h = tape.mul(&o, &tc)?;
    Ok((h, c))
}

impl Lstm {
    pub fn new(config: LstmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let pairs = match &config.sync {
            Some(p) => Some(build_pairs_for(p, config.hidden, seed)?),
            None => None,
        };
        Self::with_pairs(config, pairs, seed)
    }

    pub fn with_pairs(config: LstmConfig, pairs: Option<(PairSelection, PairSelection)>, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.sync.is_some() != pairs.is_some() {
            return Err(Error::Config("pair selections must be given exactly when sync is configured".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut store = ParamStore::new();
        let h = config.hidden;
        let attention_used = config.backbone.uses_attention();
        let backbone = Backbone::new(&mut store, &config.backbone, config.d_input, &mut rng)?;
        let attention = if attention_used {
            Some(CrossAttention::new(&mut store, "attention", config.d_input, config.n_heads, &mut rng)?)
        } else {
            None
        };
        let cells = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { config.d_input } else { h };
                Linear::new(&mut store, &format!("lstm.{l}"), input + h, 4 * h, &mut rng)
            })
            .collect();
        let classes = config.output.width();
        let (sync_out, sync_action, w_in, w_out) = match &pairs {
            Some((out, action)) => {
                let so = SyncReadout::new(&mut store, "sync_out", out.pairs.clone());
                let sa = attention_used.then(|| SyncReadout::new(&mut store, "sync_action", action.pairs.clone()));
                let w_in = attention_used.then(|| Linear::new(&mut store, "w_in", action.len(), config.d_input, &mut rng));
                let w_out = Linear::new(&mut store, "w_out", out.len(), classes, &mut rng);
                (Some(so), sa, w_in, w_out)
            }
            None => {
                let w_in = attention_used.then(|| Linear::new(&mut store, "w_in", h, config.d_input, &mut rng));
                let w_out = Linear::new(&mut store, "w_out", h, classes, &mut rng);
                (None, None, w_in, w_out)
            }
        };
        Ok(Self {
            config,
            params: store,
            pairs,
            backbone,
            attention,
            cells,
            sync_out,
            sync_action,
            w_in,
            w_out,
        })
    }

    pub fn run(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        input: &DiffArray,
    ) -> Result<Vec<LstmTick>> {
        let batch = input.shape()[0];
        let h = self.config.hidden;
        let features = self.backbone.forward(tape, params, input)?;
        let context = match &self.attention {
            Some(att) => Context::Attention(att.project(tape, params, &features)?),
            None => Context::Direct(features),
        };
        let mut hs = vec![DiffArray::zeros([batch, h]); self.cells.len()];
        let mut cs = hs.clone();
        let mut action_acc: Option<SyncAccumulator> = None;
        let mut out_acc: Option<SyncAccumulator> = None;
        let mut ticks = Vec::with_capacity(self.config.ticks);
        for tick in 1..=self.config.ticks {
            let top = hs.last().expect("at least one layer").clone();
            let (x, attention) = match &context {
                Context::Direct(x) => (x.clone(), None),
                Context::Attention(kv) => {
                    let src = match &self.sync_action {
                        Some(ro) => {
                            let (s, acc) = ro.step(tape, params, &top, action_acc.take())?;
                            action_acc = Some(acc);
                            s
                        }
                        None => top,
                    };
                    let w_in = self.w_in.as_ref().expect("attention models project queries");
                    let q = w_in.forward(tape, params, &src)?;
                    let att = self.attention.as_ref().expect("attention context");
                    let (o, w) = att.attend(tape, params, &q, kv)?;
                    (o, Some(w))
                }
            };
            let mut layer_in = x;
            for (l, cell) in self.cells.iter().enumerate() {
                let (hn, cn) = lstm_cell(tape, params, cell, &layer_in, &hs[l], &cs[l])?;
                hs[l] = hn.clone();
                cs[l] = cn;
                layer_in = hn;
            }
            let hidden = layer_in;
            let features = match &self.sync_out {
                Some(ro) => {
                    let (s, acc) = ro.step(tape, params, &hidden, out_acc.take())?;
                    out_acc = Some(acc);
                    s
                }
                None => hidden.clone(),
            };
            let logits = self.w_out.forward(tape, params, &features)?;
            if !logits.all_finite() {
                return Err(Error::NonFinite {
                    what: "lstm outputs".into(),
                    tick,
                });
            }
            ticks.push(LstmTick {
                logits,
                attention,
                hidden,
            });
        }
        Ok(ticks)
    }
}
