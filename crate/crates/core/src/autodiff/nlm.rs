//! Batched contraction for neuron-level models: `D` independent two-layer
//! perceptrons, each reading its own `M`-long pre-activation history.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::array::DiffArray;
use super::elementwise::sigmoid;
use super::tape::{GradBuf, NodeId, Op, Tape};

/// Hidden-layer nonlinearity for neuron-level models and synapse layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Silu,
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) struct NlmSaved {
    act: Activation,
    batch: usize,
    d: usize,
    m: usize,
    h: usize,
    history: Arc<Vec<f64>>,
    w1: Arc<Vec<f64>>,
    w2: Arc<Vec<f64>>,
    /// Hidden pre-activations `[batch×D×H]`.
    pre: Vec<f64>,
}

impl Tape {
    /// Per neuron `d`: `h = act(w1[d]ᵀ·A[d] + b1[d])`, `z[d] = w2[d]·h + b2[d]`.
    ///
    /// `history` is `[D×M]` or `[B×D×M]`; weights are `w1[D×M×H]`, `b1[D×H]`,
    /// `w2[D×H]`, `b2[D]`. The output drops the trailing `M` axis.
    pub fn batched_nlm_contract(
        &mut self,
        history: &DiffArray,
        w1: &DiffArray,
        b1: &DiffArray,
        w2: &DiffArray,
        b2: &DiffArray,
        act: Activation,
    ) -> Result<DiffArray> {
        let hs = history.shape();
        let ws = w1.shape();
        let mismatch = |what: &'static str, other: &DiffArray| Error::ShapeMismatch {
            op: what,
            lhs: hs.to_vec(),
            rhs: other.shape().to_vec(),
        };
        if !(hs.len() == 2 || hs.len() == 3) || ws.len() != 3 {
            return Err(mismatch("nlm history/w1", w1));
        }
        let (d, m) = (hs[hs.len() - 2], hs[hs.len() - 1]);
        let batch = if hs.len() == 3 { hs[0] } else { 1 };
        let h = ws[2];
        if ws[0] != d || ws[1] != m {
            return Err(mismatch("nlm history/w1", w1));
        }
        if b1.shape() != [d, h] {
            return Err(mismatch("nlm b1", b1));
        }
        if w2.shape() != [d, h] {
            return Err(mismatch("nlm w2", w2));
        }
        if b2.shape() != [d] {
            return Err(mismatch("nlm b2", b2));
        }

        let (hd, w1d, b1d, w2d, b2d) = (history.data(), w1.data(), b1.data(), w2.data(), b2.data());
        let mut pre = vec![0.0; batch * d * h];
        let mut out = vec![0.0; batch * d];
        for b in 0..batch {
            for n in 0..d {
                let hist = &hd[(b * d + n) * m..(b * d + n + 1) * m];
                let u = &mut pre[(b * d + n) * h..(b * d + n + 1) * h];
                u.copy_from_slice(&b1d[n * h..(n + 1) * h]);
                for (k, &a) in hist.iter().enumerate() {
                    let row = &w1d[(n * m + k) * h..(n * m + k + 1) * h];
                    for (uj, wj) in u.iter_mut().zip(row) {
                        *uj += a * wj;
                    }
                }
                let w2row = &w2d[n * h..(n + 1) * h];
                out[b * d + n] = b2d[n]
                    + u.iter()
                        .zip(w2row)
                        .map(|(&uj, &wj)| act.apply(uj) * wj)
                        .sum::<f64>();
            }
        }
        let out_shape = hs[..hs.len() - 1].to_vec();
        let saved = NlmSaved {
            act,
            batch,
            d,
            m,
            h,
            history: history.shared(),
            w1: w1.shared(),
            w2: w2.shared(),
            pre,
        };
        self.record(
            Op::Nlm(Box::new(saved)),
            vec![history.node(), w1.node(), b1.node(), w2.node(), b2.node()],
            out_shape,
            Arc::new(out),
        )
    }
}

pub(super) fn backward(s: &NlmSaved, g: &[f64], inputs: &[Option<NodeId>], buf: &mut GradBuf<'_>) {
    let (batch, d, m, h) = (s.batch, s.d, s.m, s.h);
    // du[b,n,j] = g[b,n] · w2[n,j] · act'(pre[b,n,j])
    let mut du = vec![0.0; batch * d * h];
    for b in 0..batch {
        for n in 0..d {
            let gb = g[b * d + n];
            let base = (b * d + n) * h;
            for j in 0..h {
                du[base + j] = gb * s.w2[n * h + j] * s.act.derivative(s.pre[base + j]);
            }
        }
    }
    buf.with(inputs[0], |gh| {
        for b in 0..batch {
            for n in 0..d {
                let dun = &du[(b * d + n) * h..(b * d + n + 1) * h];
                for k in 0..m {
                    let row = &s.w1[(n * m + k) * h..(n * m + k + 1) * h];
                    gh[(b * d + n) * m + k] += dun.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
    });
    buf.with(inputs[1], |gw1| {
        for b in 0..batch {
            for n in 0..d {
                let dun = &du[(b * d + n) * h..(b * d + n + 1) * h];
                for k in 0..m {
                    let a = s.history[(b * d + n) * m + k];
                    let row = &mut gw1[(n * m + k) * h..(n * m + k + 1) * h];
                    for (r, x) in row.iter_mut().zip(dun) {
                        *r += a * x;
                    }
                }
            }
        }
    });
    buf.with(inputs[2], |gb1| {
        for b in 0..batch {
            for (acc, x) in gb1.iter_mut().zip(&du[b * d * h..(b + 1) * d * h]) {
                *acc += x;
            }
        }
    });
    buf.with(inputs[3], |gw2| {
        for b in 0..batch {
            for n in 0..d {
                let gb = g[b * d + n];
                let base = (b * d + n) * h;
                for j in 0..h {
                    gw2[n * h + j] += gb * s.act.apply(s.pre[base + j]);
                }
            }
        }
    });
    buf.with(inputs[4], |gb2| {
        for b in 0..batch {
            for n in 0..d {
                gb2[n] += g[b * d + n];
            }
        }
    });
}
