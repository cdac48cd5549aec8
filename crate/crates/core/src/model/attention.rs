use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffArray, Tape};
use crate::error::{Error, Result};
use crate::params::{Linear, ParamStore};

/// Multi-head cross attention with learned query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub width: usize,
}

/// Keys `[B×H×dh×L]` and values `[B×H×L×dh]`, projected once per forward pass.
#[derive(Clone, Debug)]
pub struct KeyValues {
    keys_t: DiffArray,
    values: DiffArray,
    locations: usize,
}

impl KeyValues {
    pub fn locations(&self) -> usize {
        self.locations
    }
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide width {width}")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), width, width, rng),
            key: Linear::new(store, &format!("{name}.key"), width, width, rng),
            value: Linear::new(store, &format!("{name}.value"), width, width, rng),
            out: Linear::new(store, &format!("{name}.out"), width, width, rng),
            heads,
            width,
        })
    }

    pub fn param_count(width: usize) -> usize {
        4 * Linear::param_count(width, width)
    }

    fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Projects backbone features `[B×L×width]` into per-head keys and values.
    pub fn project(&self, tape: &mut Tape, params: &ParamStore, features: &DiffArray) -> Result<KeyValues> {
        let s = features.shape();
        if s.len() != 3 || s[2] != self.width || s[1] == 0 {
            return Err(Error::ShapeMismatch {
                op: "attention features",
                lhs: s.to_vec(),
                rhs: vec![0, 0, self.width],
            });
        }
        let (b, l, h, dh) = (s[0], s[1], self.heads, self.head_dim());
        let k = self.key.forward(tape, params, features)?;
        let k = tape.reshape(&k, &[b, l, h, dh])?;
        let keys_t = tape.permute(&k, &[0, 2, 3, 1])?;
        let v = self.value.forward(tape, params, features)?;
        let v = tape.reshape(&v, &[b, l, h, dh])?;
        let values = tape.permute(&v, &[0, 2, 1, 3])?;
        Ok(KeyValues {
            keys_t,
            values,
            locations: l,
        })
    }

    /// Attends from `q` (`[B×width]`). Returns the output `[B×width]` and
    /// the attention weights `[B×H×L]`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        q: &DiffArray,
        kv: &KeyValues,
    ) -> Result<(DiffArray, DiffArray)> {
        let b = q.shape()[0];
        let (h, dh, l) = (self.heads, self.head_dim(), kv.locations);
        let q = self.query.forward(tape, params, q)?;
        let q = tape.reshape(&q, &[b, h, 1, dh])?;
        let scores = tape.batch_matmul(&q, &kv.keys_t)?;
        let scores = tape.scale(&scores, 1.0 / (dh as f64).sqrt())?;
        let weights = tape.softmax(&scores, 3)?;
        let o = tape.batch_matmul(&weights, &kv.values)?;
        let o = tape.reshape(&o, &[b, self.width])?;
        let o = self.out.forward(tape, params, &o)?;
        let weights = tape.reshape(&weights, &[b, h, l])?;
        Ok((o, weights))
    }
}
