//! Dense f64 arrays with reverse-mode automatic differentiation.
//!
//! Every operation is a method on [`Tape`]. When at least one input is
//! tracked, the op is appended to the tape; otherwise it is evaluated eagerly
//! and the result stays untracked.
//!
//! Broadcasting for binary ops is trailing-dimension only: the shapes must be
//! equal, or the shape of one operand must be a suffix of the other's
//! (`[B, D] + [D]`, `[B, D] * []`). Anything else needs an explicit reshape.

mod array;
mod axis;
mod elementwise;
mod gemm;
mod linalg;
mod nlm;
mod tape;

pub use array::{numel, DiffArray};
pub use axis::{argmax, argmax_slice, argmin_slice, ReduceKind, LAYER_NORM_EPS};
pub use elementwise::{sigmoid, BinaryKind, UnaryKind};
pub use nlm::Activation;
pub use tape::{Gradients, NodeId, Tape};

#[cfg(test)]
mod tests;
