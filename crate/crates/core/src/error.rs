use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("{0}: zero-length reduction")]
    EmptyReduction(&'static str),

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("tape already consumed by backward; start a new tape for the next forward pass")]
    TapeConsumed,

    #[error("loss does not depend on any tracked array")]
    UntrackedLoss,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {what} at tick {tick}")]
    NonFinite { what: String, tick: usize },

    #[error("tick overflow: state is at tick {tick} of {max}")]
    TickOverflow { tick: usize, max: usize },

    #[error(
        "parameter budget {target} unreachable within {:.1}%: nearest achievable count is {nearest}",
        tolerance * 100.0
    )]
    BudgetUnreachable {
        target: usize,
        nearest: usize,
        tolerance: f64,
    },

    #[error("infeasible CTC alignment: label of length {label_len} needs {needed} ticks, got {ticks}")]
    CtcInfeasible {
        label_len: usize,
        needed: usize,
        ticks: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
