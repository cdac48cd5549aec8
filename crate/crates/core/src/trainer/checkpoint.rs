//! Checkpoint files.
//!
//! ```text
//! magic    8 bytes "CTMCKPT\0"
//! version  u32
//! meta     u64 length + UTF-8 JSON (CheckpointMeta)
//! tensors  u32 count, then per tensor:
//!          u32 name length, name, u32 rank, rank × u64 dims, numel × f64
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::DiffArray;
use crate::error::{Error, Result};
use crate::model::PairSelection;
use crate::network::{ModelConfig, Network};
use crate::tasks::TaskConfig;

use super::optim::AdamWHyper;
use super::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub seed: u64,
    pub pairs: Option<(PairSelection, PairSelection)>,
    pub task: Option<TaskConfig>,
    pub train: Option<TrainConfig>,
    pub optimizer: Option<AdamWHyper>,
    /// Optimizer steps taken when the checkpoint was written.
    pub iteration: usize,
    /// Evaluation accuracy at that point, when known.
    pub eval_accuracy: Option<f64>,
}

impl CheckpointMeta {
    pub fn for_network(network: &Network, seed: u64) -> Self {
        Self {
            model: network.config(),
            seed,
            pairs: network.pairs(),
            task: None,
            train: None,
            optimizer: None,
            iteration: 0,
            eval_accuracy: None,
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn checkpoint_bytes(network: &Network, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let params = network.params();
    put_u32(&mut out, params.len())?;
    for (name, value) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, value.shape().len())?;
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, network: &Network, meta: &CheckpointMeta) -> Result<()> {
    let bytes = checkpoint_bytes(network, meta)?;
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.at.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {}", self.at))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint into its metadata and named tensors.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, Vec<(String, DiffArray)>)> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = usize::try_from(c.u64()?).map_err(|_| Error::Checkpoint("metadata too large".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(c.take(meta_len)?)?;
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.u32()?;
        let name = String::from_utf8(c.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, DiffArray::new(shape, data)?));
    }
    if c.at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    Ok((meta, tensors))
}

/// Rebuilds the network described by a checkpoint and loads its tensors.
pub fn network_from_checkpoint(bytes: &[u8]) -> Result<(Network, CheckpointMeta)> {
    let (meta, tensors) = parse_checkpoint(bytes)?;
    let mut network = Network::with_pairs(&meta.model, meta.pairs.clone(), meta.seed)?;
    let params = network.params_mut();
    if tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, model has {}",
            tensors.len(),
            params.len()
        )));
    }
    for (i, (name, value)) in tensors.into_iter().enumerate() {
        if params.name_at(i) != name {
            return Err(Error::Checkpoint(format!(
                "tensor {i} is {name:?}, model expects {:?}",
                params.name_at(i)
            )));
        }
        let id = params.id(&name).expect("name present");
        params
            .set(id, value)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
    }
    Ok((network, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    network_from_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::baselines::FeedForwardConfig;
    use crate::model::{BackboneConfig, OutputSpec};

    fn ff() -> Network {
        Network::new(
            &ModelConfig::FeedForward(FeedForwardConfig {
                hidden: 3,
                d_input: 4,
                backbone: BackboneConfig::Direct { width: 4 },
                output: OutputSpec {
                    positions: 1,
                    classes: 3,
                },
            }),
            5,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = ff();
        let meta = CheckpointMeta::for_network(&net, 5);
        let bytes = checkpoint_bytes(&net, &meta).unwrap();
        let (back, meta_back) = network_from_checkpoint(&bytes).unwrap();
        assert_eq!(meta_back, meta);
        assert!(back.params().bit_eq(net.params()));
        let x = DiffArray::new(vec![1, 4], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let a = net.forward(&mut Tape::new(), net.params(), &x, None).unwrap();
        let b = back.forward(&mut Tape::new(), back.params(), &x, None).unwrap();
        assert!(a.logits[0].bit_eq(&b.logits[0]));
    }

    #[test]
    fn detects_damage() {
        let net = ff();
        let bytes = checkpoint_bytes(&net, &CheckpointMeta::for_network(&net, 5)).unwrap();
        assert!(network_from_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[1] = 0;
        assert!(network_from_checkpoint(&bad).is_err());
        let mut ver = bytes;
        ver[8] = 9;
        assert!(matches!(network_from_checkpoint(&ver), Err(Error::Checkpoint(_))));
    }
}
