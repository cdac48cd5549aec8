//! One interface over the CTM and the baselines for training and analysis.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffArray, Tape};
use crate::baselines::{FeedForward, FeedForwardConfig, Lstm, LstmConfig};
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, Ctm, CtmConfig, OutputSpec, PairSelection};
use crate::params::ParamStore;
use crate::tasks::TaskConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Ctm(CtmConfig),
    Lstm(LstmConfig),
    FeedForward(FeedForwardConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Ctm(c) => c.validate(),
            ModelConfig::Lstm(c) => c.validate(),
            ModelConfig::FeedForward(c) => c.validate(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Ctm(_) => "ctm",
            ModelConfig::Lstm(_) => "lstm",
            ModelConfig::FeedForward(_) => "feed-forward",
        }
    }

    pub fn output(&self) -> OutputSpec {
        match self {
            ModelConfig::Ctm(c) => c.output,
            ModelConfig::Lstm(c) => c.output,
            ModelConfig::FeedForward(c) => c.output,
        }
    }

    pub fn backbone(&self) -> &BackboneConfig {
        match self {
            ModelConfig::Ctm(c) => &c.backbone,
            ModelConfig::Lstm(c) => &c.backbone,
            ModelConfig::FeedForward(c) => &c.backbone,
        }
    }

    /// Number of output ticks (1 for the feed-forward model).
    pub fn ticks(&self) -> usize {
        match self {
            ModelConfig::Ctm(c) => c.ticks,
            ModelConfig::Lstm(c) => c.ticks,
            ModelConfig::FeedForward(_) => 1,
        }
    }
}

/// Checks that `model` consumes `task` inputs and emits its outputs, listing
/// every mismatch.
pub fn check_compatible(model: &ModelConfig, task: &TaskConfig) -> Result<()> {
    let mut diffs = Vec::new();
    let (m_in, t_in) = (model.backbone().input_shape(), task.input_shape());
    if m_in != t_in {
        diffs.push(format!("input shape: model {m_in:?} vs {} task {t_in:?}", task.kind()));
    }
    let (m_out, t_out) = (model.output(), task.output_spec());
    if m_out != t_out {
        diffs.push(format!(
            "output: model {}×{} (positions×classes) vs {} task {}×{}",
            m_out.positions,
            m_out.classes,
            task.kind(),
            t_out.positions,
            t_out.classes
        ));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("model and task disagree:\n  {}", diffs.join("\n  "))))
    }
}

/// Per-tick results of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `T` arrays of `[B×(P·C)]`.
    pub logits: Vec<DiffArray>,
    /// `[B×H×L]` attention weights per tick, when the model attends.
    pub attention: Vec<Option<DiffArray>>,
    /// `[B×width]` neuron state after each tick (post-activations for the
    /// CTM, top-layer hidden state for the LSTM, gated hidden layer for the
    /// feed-forward model).
    pub activations: Vec<DiffArray>,
}

#[derive(Clone, Debug)]
pub enum Network {
    Ctm(Ctm),
    Lstm(Lstm),
    FeedForward(FeedForward),
}

impl Network {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::Ctm(c) => Network::Ctm(Ctm::new(c.clone(), seed)?),
            ModelConfig::Lstm(c) => Network::Lstm(Lstm::new(c.clone(), seed)?),
            ModelConfig::FeedForward(c) => Network::FeedForward(FeedForward::new(c.clone(), seed)?),
        })
    }

    /// Rebuilds a network around stored pair selections.
    pub fn with_pairs(config: &ModelConfig, pairs: Option<(PairSelection, PairSelection)>, seed: u64) -> Result<Self> {
        Ok(match (config, pairs) {
            (ModelConfig::Ctm(c), Some((out, action))) => Network::Ctm(Ctm::with_pairs(c.clone(), out, action, seed)?),
            (ModelConfig::Lstm(c), pairs) => Network::Lstm(Lstm::with_pairs(c.clone(), pairs, seed)?),
            (config, _) => Self::new(config, seed)?,
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Network::Ctm(m) => ModelConfig::Ctm(m.config.clone()),
            Network::Lstm(m) => ModelConfig::Lstm(m.config.clone()),
            Network::FeedForward(m) => ModelConfig::FeedForward(m.config.clone()),
        }
    }

    pub fn pairs(&self) -> Option<(PairSelection, PairSelection)> {
        match self {
            Network::Ctm(m) => Some((m.out_pairs.clone(), m.action_pairs.clone())),
            Network::Lstm(m) => m.pairs.clone(),
            Network::FeedForward(_) => None,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Network::Ctm(m) => &m.params,
            Network::Lstm(m) => &m.params,
            Network::FeedForward(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Network::Ctm(m) => &mut m.params,
            Network::Lstm(m) => &mut m.params,
            Network::FeedForward(m) => &mut m.params,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().count()
    }

    pub fn output(&self) -> OutputSpec {
        self.config().output()
    }

    /// Runs every tick with `params` (the model's own store or an attached
    /// copy). Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        input: &DiffArray,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        match self {
            Network::Ctm(m) => {
                let run = m.run(tape, params, input, rng)?;
                let mut out = ForwardOutput {
                    logits: Vec::with_capacity(run.ticks.len()),
                    attention: Vec::with_capacity(run.ticks.len()),
                    activations: Vec::with_capacity(run.ticks.len()),
                };
                for t in run.ticks {
                    out.logits.push(t.logits);
                    out.attention.push(t.attention);
                    out.activations.push(t.z);
                }
                Ok(out)
            }
            Network::Lstm(m) => {
                let ticks = m.run(tape, params, input)?;
                let mut out = ForwardOutput {
                    logits: Vec::with_capacity(ticks.len()),
                    attention: Vec::with_capacity(ticks.len()),
                    activations: Vec::with_capacity(ticks.len()),
                };
                for t in ticks {
                    out.logits.push(t.logits);
                    out.attention.push(t.attention);
                    out.activations.push(t.hidden);
                }
                Ok(out)
            }
            Network::FeedForward(m) => {
                let (logits, hidden) = m.run_with_hidden(tape, params, input)?;
                Ok(ForwardOutput {
                    logits: vec![logits],
                    attention: vec![None],
                    activations: vec![hidden],
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Pairing, Variant};

    fn ctm_config() -> CtmConfig {
        toml::from_str(
            r#"
            d_model = 8
            ticks = 3
            memory = 3
            synapse_depth = 1
            d_input = 4
            d_hidden = 2
            pairing = { kind = "dense", j_out = 3, j_action = 2 }
            backbone = { kind = "tokens", seq_len = 4, d_embed = 4 }
            output = { positions = 4, classes = 2 }
            "#,
        )
        .unwrap()
    }

    #[test]
    fn compatibility_diff() {
        let cfg = ModelConfig::Ctm(ctm_config());
        check_compatible(&cfg, &TaskConfig::Parity { length: 4 }).unwrap();
        let msg = check_compatible(&cfg, &TaskConfig::Parity { length: 5 }).unwrap_err().to_string();
        assert!(msg.contains("input shape: model [4] vs parity task [5]"), "{msg}");
        assert!(msg.contains("output: model 4×2"), "{msg}");
    }

    #[test]
    fn tagged_config_roundtrip() {
        let cfg = ModelConfig::Ctm(ctm_config());
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("kind = \"ctm\""));
        assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), cfg);
        let mut bad = text.clone();
        bad.push_str("\nbogus = 1\n");
        assert!(toml::from_str::<ModelConfig>(&bad).is_err());
    }

    #[test]
    fn forward_shapes_for_every_kind() {
        let ctm = ctm_config();
        let configs = [
            ModelConfig::Ctm(ctm.clone()),
            ModelConfig::Ctm(CtmConfig {
                variant: Variant::NoSync,
                ..ctm.clone()
            }),
            ModelConfig::Lstm(LstmConfig {
                hidden: 5,
                layers: 1,
                ticks: 3,
                d_input: 4,
                n_heads: 1,
                backbone: ctm.backbone.clone(),
                output: ctm.output,
                sync: Some(Pairing::Dense { j_out: 3, j_action: 2 }),
            }),
            ModelConfig::FeedForward(FeedForwardConfig {
                hidden: 6,
                d_input: 4,
                backbone: ctm.backbone.clone(),
                output: ctm.output,
            }),
        ];
        let input = DiffArray::new(vec![2, 4], vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0]).unwrap();
        for cfg in configs {
            let net = Network::new(&cfg, 3).unwrap();
            let mut tape = Tape::new();
            let out = net.forward(&mut tape, net.params(), &input, None).unwrap();
            assert_eq!(out.logits.len(), cfg.ticks());
            assert!(out.logits.iter().all(|l| l.shape() == [2, 8]));
            assert_eq!(out.activations.len(), cfg.ticks());
            let rebuilt = Network::with_pairs(&cfg, net.pairs(), 3).unwrap();
            assert!(rebuilt.params().bit_eq(net.params()));
        }
    }
}
