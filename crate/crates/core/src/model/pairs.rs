use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{CtmConfig, Pairing};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Output,
    Action,
}

/// Neuron pairs read by one synchronization role. Fixed once built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSelection {
    pub role: Role,
    pub strategy: String,
    pub pairs: Vec<(usize, usize)>,
}

impl PairSelection {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn left(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn right(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// Sorted distinct neurons touched by this selection.
    pub fn neurons(&self) -> Vec<usize> {
        let mut n: Vec<usize> = self.pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        n.sort_unstable();
        n.dedup();
        n
    }
}

/// Samples the output and action pair sets for `config`.
pub fn build_pairs(config: &CtmConfig, seed: u64) -> Result<(PairSelection, PairSelection)> {
    build_pairs_for(&config.pairing, config.d_model, seed)
}

pub fn build_pairs_for(pairing: &Pairing, d_model: usize, seed: u64) -> Result<(PairSelection, PairSelection)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = pairing.tag().to_string();
    let select = |role, pairs| PairSelection {
        role,
        strategy: tag.clone(),
        pairs,
    };
    let need = |n: usize| -> Result<()> {
        if n > d_model {
            Err(Error::Config(format!(
                "{tag} pairing needs {n} distinct neurons but d_model is {d_model}"
            )))
        } else {
            Ok(())
        }
    };
    let mut order: Vec<usize> = (0..d_model).collect();
    match *pairing {
        Pairing::Dense { j_out, j_action } => {
            need(j_out + j_action)?;
            order.shuffle(&mut rng);
            let (out, rest) = order.split_at(j_out);
            let action = &rest[..j_action];
            Ok((select(Role::Output, dense(out)), select(Role::Action, dense(action))))
        }
        Pairing::SemiDense {
            j1_out,
            j2_out,
            j1_action,
            j2_action,
        } => {
            need(j1_out + j2_out + j1_action + j2_action)?;
            order.shuffle(&mut rng);
            let (a, rest) = order.split_at(j1_out);
            let (b, rest) = rest.split_at(j2_out);
            let (c, rest) = rest.split_at(j1_action);
            let d = &rest[..j2_action];
            Ok((select(Role::Output, cross(a, b)), select(Role::Action, cross(c, d))))
        }
        Pairing::Random { d_out, d_action, n_self } => {
            if n_self > d_out || n_self > d_action {
                return Err(Error::Config(format!(
                    "n_self {n_self} exceeds a pair budget ({d_out}, {d_action})"
                )));
            }
            need(n_self)?;
            let mut draw = |count: usize| {
                let mut order: Vec<usize> = (0..d_model).collect();
                order.shuffle(&mut rng);
                let mut pairs: Vec<(usize, usize)> = order[..n_self].iter().map(|&i| (i, i)).collect();
                for _ in n_self..count {
                    pairs.push((rng.random_range(0..d_model), rng.random_range(0..d_model)));
                }
                pairs
            };
            let out = draw(d_out);
            let action = draw(d_action);
            Ok((select(Role::Output, out), select(Role::Action, action)))
        }
    }
}

fn dense(neurons: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(neurons.len() * (neurons.len() + 1) / 2);
    for (a, &i) in neurons.iter().enumerate() {
        for &j in &neurons[a..] {
            pairs.push((i, j));
        }
    }
    pairs
}

fn cross(left: &[usize], right: &[usize]) -> Vec<(usize, usize)> {
    left.iter().flat_map(|&i| right.iter().map(move |&j| (i, j))).collect()
}
