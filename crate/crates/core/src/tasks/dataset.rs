//! Frozen example sets on disk.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "CTMDSET\0"
//! version u32
//! count   u64
//! count × { n_in u32, n_in × f64, n_target u32, n_target × u64 }
//! ```
//!
//! A JSON sidecar with the same stem and a `.json` extension holds
//! [`DatasetMeta`].

use std::fs;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{batch_rng, Example, TaskBatch, TaskConfig, EVAL_STREAM};

pub const DATASET_MAGIC: &[u8; 8] = b"CTMDSET\0";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_SCHEMA: &str = "ctm-dataset v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema: String,
    pub task: TaskConfig,
    pub seed: u64,
    pub count: usize,
    pub input_shape: Vec<usize>,
    pub target_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub examples: Vec<Example>,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Dataset(format!("truncated at byte {}", self.at)));
        };
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Dataset {
    /// `count` examples from the evaluation stream of `seed`.
    pub fn generate(task: &TaskConfig, seed: u64, count: usize) -> Result<Self> {
        task.validate()?;
        let mut rng = batch_rng(seed, EVAL_STREAM);
        let examples = (0..count).map(|_| task.generate(&mut rng)).collect::<Result<Vec<_>>>()?;
        let target_len = examples.first().map_or(0, |e| e.target.len());
        Ok(Self {
            meta: DatasetMeta {
                schema: DATASET_SCHEMA.into(),
                task: task.clone(),
                seed,
                count,
                input_shape: task.input_shape(),
                target_len,
            },
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn batch(&self, range: Range<usize>) -> Result<TaskBatch> {
        let slice = self
            .examples
            .get(range.clone())
            .ok_or_else(|| Error::Dataset(format!("range {range:?} outside {} examples", self.len())))?;
        TaskBatch::from_examples(&self.meta.input_shape, slice)
    }

    /// Consecutive batches of at most `size` examples.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Result<TaskBatch>> + '_ {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |start| self.batch(start..(start + size).min(self.len())))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.examples.len() as u64).to_le_bytes());
        for e in &self.examples {
            out.extend_from_slice(&(e.input.len() as u32).to_le_bytes());
            for v in &e.input {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(e.target.len() as u32).to_le_bytes());
            for &t in &e.target {
                out.extend_from_slice(&(t as u64).to_le_bytes());
            }
        }
        out
    }

    fn examples_from_bytes(bytes: &[u8]) -> Result<Vec<Example>> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != DATASET_MAGIC {
            return Err(Error::Dataset("bad magic".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Dataset(format!("unsupported version {version}")));
        }
        let count = r.u64()?;
        let mut examples = Vec::new();
        for _ in 0..count {
            let n_in = r.u32()? as usize;
            let input = (0..n_in).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let n_t = r.u32()? as usize;
            let target = (0..n_t).map(|_| r.u64().map(|t| t as usize)).collect::<Result<Vec<_>>>()?;
            examples.push(Example { input, target });
        }
        if r.at != bytes.len() {
            return Err(Error::Dataset(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(examples)
    }

    /// Writes the container to `path` and the metadata beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        fs::write(sidecar(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
        if meta.schema != DATASET_SCHEMA {
            return Err(Error::Dataset(format!("unknown schema {:?}", meta.schema)));
        }
        let examples = Self::examples_from_bytes(&fs::read(path)?)?;
        let numel: usize = meta.input_shape.iter().product();
        if examples.len() != meta.count
            || examples
                .iter()
                .any(|e| e.input.len() != numel || e.target.len() != meta.target_len)
        {
            return Err(Error::Dataset("container disagrees with its metadata".into()));
        }
        Ok(Self { meta, examples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.bin");
        for task in [
            TaskConfig::Parity { length: 5 },
            TaskConfig::Maze { size: 7, route_len: 8 },
            TaskConfig::Sort {
                count: 4,
                mean: 1.0,
                std: 2.0,
            },
        ] {
            let ds = Dataset::generate(&task, 11, 7).unwrap();
            ds.save(&path).unwrap();
            let back = Dataset::load(&path).unwrap();
            assert_eq!(back, ds);
            assert_eq!(fs::read(&path).unwrap()[..8], DATASET_MAGIC[..]);
        }
    }

    #[test]
    fn rejects_corruption() {
        let ds = Dataset::generate(&TaskConfig::Parity { length: 3 }, 1, 2).unwrap();
        let bytes = ds.to_bytes();
        assert!(Dataset::examples_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Dataset::examples_from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Dataset::examples_from_bytes(&extra).is_err());
    }

    #[test]
    fn batching() {
        let ds = Dataset::generate(&TaskConfig::Parity { length: 3 }, 1, 5).unwrap();
        let sizes: Vec<usize> = ds.batches(2).map(|b| b.unwrap().len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert!(ds.batch(4..6).is_err());
    }
}
