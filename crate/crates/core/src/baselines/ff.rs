use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffArray, Tape};
use crate::error::{Error, Result};
use crate::model::{Backbone, BackboneConfig, OutputSpec};
use crate::params::{Linear, ParamStore};

/// Single hidden layer over mean-pooled backbone features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedForwardConfig {
    pub hidden: usize,
    pub d_input: usize,
    pub backbone: BackboneConfig,
    pub output: OutputSpec,
}

impl FeedForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.d_input == 0 || self.output.width() == 0 {
            return Err(Error::Config("hidden, d_input and output sizes must be ≥ 1".into()));
        }
        self.backbone.validate(self.d_input)
    }

    pub fn param_count(&self) -> usize {
        Backbone::param_count(&self.backbone, self.d_input)
            + Linear::param_count(self.d_input, 2 * self.hidden)
            + Linear::param_count(self.hidden, self.output.width())
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub config: FeedForwardConfig,
    pub params: ParamStore,
    backbone: Backbone,
    hidden: Linear,
    out: Linear,
}

impl FeedForward {
    pub fn new(config: FeedForwardConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, &config.backbone, config.d_input, &mut rng)?;
        let hidden = Linear::new(&mut store, "ff.hidden", config.d_input, 2 * config.hidden, &mut rng);
        let out = Linear::new(&mut store, "ff.out", config.hidden, config.output.width(), &mut rng);
        Ok(Self {
            config,
            params: store,
            backbone,
            hidden,
            out,
        })
    }

    /// Logits `[B×(positions·classes)]`.
    pub fn run(&self, tape: &mut Tape, params: &ParamStore, input: &DiffArray) -> Result<DiffArray> {
        Ok(self.run_with_hidden(tape, params, input)?.0)
    }

    /// Logits and the gated hidden layer `[B×hidden]`.
    pub fn run_with_hidden(&self, tape: &mut Tape, params: &ParamStore, input: &DiffArray) -> Result<(DiffArray, DiffArray)> {
        let features = self.backbone.forward(tape, params, input)?;
        let pooled = if features.rank() == 3 {
            tape.mean(&features, 1)?
        } else {
            features
        };
        let h = self.hidden.forward(tape, params, &pooled)?;
        let width = self.config.hidden;
        let value = tape.slice(&h, 1, 0, width)?;
        let gate = tape.slice(&h, 1, width, width)?;
        let gate = tape.sigmoid(&gate)?;
        let gated = tape.mul(&value, &gate)?;
        let logits = self.out.forward(tape, params, &gated)?;
        Ok((logits, gated))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::autodiff::sigmoid;

    fn config() -> FeedForwardConfig {
        FeedForwardConfig {
            hidden: 3,
            d_input: 4,
            backbone: BackboneConfig::Direct { width: 4 },
            output: OutputSpec {
                positions: 2,
                classes: 2,
            },
        }
    }

    #[test]
    fn counts() {
        let c = config();
        assert_eq!(FeedForward::new(c.clone(), 0).unwrap().params.count(), c.param_count());
        let mut c = config();
        c.backbone = BackboneConfig::Tokens { seq_len: 6, d_embed: 5 };
        assert_eq!(FeedForward::new(c.clone(), 0).unwrap().params.count(), c.param_count());
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let mut m = FeedForward::new(config(), 1).unwrap();
        let w = m.out.weight;
        m.params.set(w, DiffArray::zeros([3, 4])).unwrap();
        let x = DiffArray::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = m.run(&mut Tape::new(), &m.params, &x).unwrap();
        assert_eq!(y.data()[..], m.params.get(m.out.bias).data()[..]);
    }

    #[test]
    fn matches_matmul_oracle() {
        let m = FeedForward::new(config(), 2).unwrap();
        let x = [0.5, -1.0, 0.25, 2.0];
        let y = m
            .run(&mut Tape::new(), &m.params, &DiffArray::new(vec![1, 4], x.to_vec()).unwrap())
            .unwrap();
        let w1 = m.params.get(m.hidden.weight).data();
        let b1 = m.params.get(m.hidden.bias).data();
        let w2 = m.params.get(m.out.weight).data();
        let b2 = m.params.get(m.out.bias).data();
        let pre: Vec<f64> = (0..6).map(|c| b1[c] + (0..4).map(|r| x[r] * w1[r * 6 + c]).sum::<f64>()).collect();
        let g: Vec<f64> = (0..3).map(|j| pre[j] * sigmoid(pre[3 + j])).collect();
        for c in 0..4 {
            let expect = b2[c] + (0..3).map(|j| g[j] * w2[j * 4 + c]).sum::<f64>();
            assert_abs_diff_eq!(y.data()[c], expect, epsilon = 1e-12);
        }
    }
}
