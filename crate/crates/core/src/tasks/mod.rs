//! Task generators, their oracles, and batch assembly.

mod dataset;
mod maze;
mod parity;
mod sort;

pub use dataset::{Dataset, DatasetMeta, DATASET_MAGIC, DATASET_SCHEMA, DATASET_VERSION};
pub use maze::{maze_generate, maze_render, MazeInstance, Move, EAST, MAZE_CHANNELS, NORTH, SOUTH, WEST};
pub use parity::{parity_generate, parity_oracle, ParityInstance};
pub use sort::{sort_generate, stable_argsort, wait_time_stats, SortInstance, WaitStats};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::DiffArray;
use crate::error::{Error, Result};
use crate::losses::{LossMode, Targets};
use crate::model::{BackboneConfig, OutputSpec};

/// Stream reserved for frozen evaluation sets; training batches use the
/// iteration index.
pub const EVAL_STREAM: u64 = u64::MAX;

fn default_sort_count() -> usize {
    30
}

fn default_std() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Cumulative parity of `length` signs.
    Parity { length: usize },
    /// Route prediction on a `size×size` pixel maze, `route_len` moves.
    Maze { size: usize, route_len: usize },
    /// Emit the ascending order of `count` normal draws through CTC.
    Sort {
        #[serde(default = "default_sort_count")]
        count: usize,
        #[serde(default)]
        mean: f64,
        #[serde(default = "default_std")]
        std: f64,
    },
}

/// One flattened input and its integer targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TaskBatch {
    /// `[B × input_shape]`.
    pub input: DiffArray,
    pub targets: Targets,
}

impl TaskBatch {
    pub fn from_examples(input_shape: &[usize], examples: &[Example]) -> Result<Self> {
        let Some(first) = examples.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let per = first.target.len();
        let mut shape = vec![examples.len()];
        shape.extend_from_slice(input_shape);
        let input = DiffArray::new(shape, examples.iter().flat_map(|e| e.input.iter().copied()).collect())?;
        if examples.iter().any(|e| e.target.len() != per) {
            return Err(Error::InvalidArgument("ragged targets in batch".into()));
        }
        let targets = Targets::new(examples.iter().flat_map(|e| e.target.iter().copied()).collect(), per)?;
        Ok(Self { input, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generator for batch `stream` of a run seeded with `seed`.
pub fn batch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskConfig::Parity { length } if length == 0 => Err(Error::Config("parity length must be ≥ 1".into())),
            TaskConfig::Maze { size, .. } if size < 5 || size % 2 == 0 => {
                Err(Error::Config(format!("maze size must be odd and ≥ 5, got {size}")))
            }
            TaskConfig::Maze { route_len: 0, .. } => Err(Error::Config("maze route_len must be ≥ 1".into())),
            TaskConfig::Sort { count, .. } if count == 0 => Err(Error::Config("sort count must be ≥ 1".into())),
            TaskConfig::Sort { mean, std, .. } if !(std > 0.0 && std.is_finite() && mean.is_finite()) => {
                Err(Error::Config(format!("sort distribution N({mean}, {std}²) is invalid")))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TaskConfig::Parity { .. } => "parity",
            TaskConfig::Maze { .. } => "maze",
            TaskConfig::Sort { .. } => "sort",
        }
    }

    /// Output head geometry. Sorting emits one index (or blank) per tick.
    pub fn output_spec(&self) -> OutputSpec {
        match *self {
            TaskConfig::Parity { length } => OutputSpec {
                positions: length,
                classes: 2,
            },
            TaskConfig::Maze { route_len, .. } => OutputSpec {
                positions: route_len,
                classes: Move::COUNT,
            },
            TaskConfig::Sort { count, .. } => OutputSpec {
                positions: 1,
                classes: count + 1,
            },
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            TaskConfig::Parity { length } => vec![length],
            TaskConfig::Maze { size, .. } => vec![size, size, MAZE_CHANNELS],
            TaskConfig::Sort { count, .. } => vec![count],
        }
    }

    pub fn default_loss(&self) -> LossMode {
        match self {
            TaskConfig::Parity { .. } => LossMode::TwoTick,
            TaskConfig::Maze { .. } => LossMode::Curriculum,
            TaskConfig::Sort { .. } => LossMode::Ctc,
        }
    }

    /// Front end used when a model section names none.
    pub fn default_backbone(&self) -> BackboneConfig {
        match *self {
            TaskConfig::Parity { length } => BackboneConfig::Tokens {
                seq_len: length,
                d_embed: 16,
            },
            TaskConfig::Maze { size, .. } => BackboneConfig::Patches {
                size,
                channels: MAZE_CHANNELS,
                patch: 3,
            },
            TaskConfig::Sort { count, .. } => BackboneConfig::Direct { width: count },
        }
    }

    /// Checks that a backbone consumes this task's inputs.
    pub fn check_backbone(&self, backbone: &BackboneConfig) -> Result<()> {
        if backbone.input_shape() != self.input_shape() {
            return Err(Error::Config(format!(
                "backbone expects inputs of shape {:?}, {} task produces {:?}",
                backbone.input_shape(),
                self.kind(),
                self.input_shape()
            )));
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Example> {
        Ok(match *self {
            TaskConfig::Parity { length } => {
                let inst = parity_generate(length, rng);
                Example {
                    input: inst.values.iter().map(|&v| f64::from(v)).collect(),
                    target: inst.labels(),
                }
            }
            TaskConfig::Maze { size, route_len } => {
                let maze = maze_generate(size, route_len, rng)?;
                Example {
                    input: maze_render(&maze),
                    target: maze.labels(),
                }
            }
            TaskConfig::Sort { count, mean, std } => {
                let inst = sort_generate(count, mean, std, rng)?;
                Example {
                    input: inst.values,
                    target: inst.target,
                }
            }
        })
    }

    /// `size` fresh examples drawn from stream `stream` of `seed`.
    pub fn batch(&self, seed: u64, stream: u64, size: usize) -> Result<TaskBatch> {
        let mut rng = batch_rng(seed, stream);
        let examples = (0..size).map(|_| self.generate(&mut rng)).collect::<Result<Vec<_>>>()?;
        TaskBatch::from_examples(&self.input_shape(), &examples)
    }
}
