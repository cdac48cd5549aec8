use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::array::{AxisDims, DiffArray};
use super::elementwise::{BinaryKind, UnaryKind};
use super::nlm::NlmSaved;
use super::{axis, elementwise, linalg, nlm};

pub type NodeId = usize;

/// Recorded operation plus whatever the backward pass needs from the forward.
pub(crate) enum Op {
    Leaf {
        trainable: bool,
    },
    Unary {
        kind: UnaryKind,
        x: Arc<Vec<f64>>,
        y: Arc<Vec<f64>>,
    },
    Binary {
        kind: BinaryKind,
        a: Arc<Vec<f64>>,
        b: Arc<Vec<f64>>,
    },
    MatMul {
        a: Arc<Vec<f64>>,
        b: Arc<Vec<f64>>,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: Arc<Vec<f64>>,
        b: Arc<Vec<f64>>,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Nlm(Box<NlmSaved>),
    Softmax {
        y: Arc<Vec<f64>>,
        dims: AxisDims,
    },
    LogSoftmax {
        y: Arc<Vec<f64>>,
        dims: AxisDims,
    },
    LayerNorm {
        xhat: Arc<Vec<f64>>,
        inv_std: Vec<f64>,
        dims: AxisDims,
    },
    Reduce {
        kind: axis::ReduceKind,
        dims: AxisDims,
        argmax: Vec<usize>,
    },
    Concat {
        outer: usize,
        inner: usize,
        sizes: Vec<usize>,
    },
    Slice {
        dims: AxisDims,
        start: usize,
        len: usize,
    },
    IndexSelect {
        dims: AxisDims,
        indices: Vec<usize>,
    },
    Permute {
        in_shape: Vec<usize>,
        perm: Vec<usize>,
    },
    Reshape,
    /// Output `b` depends only on input block `b`; the local Jacobian is precomputed.
    Blockwise {
        local_grad: Vec<f64>,
        block: usize,
    },
}

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Option<NodeId>>,
    pub len: usize,
}

/// Append-only record of tracked operations; `backward` replays it in reverse.
///
/// Operations whose inputs are all untracked are evaluated without being
/// recorded, so a forward pass over plain parameters leaves the tape empty.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Accumulator handed to per-op backward functions.
pub(crate) struct GradBuf<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &'a [Node],
}

impl GradBuf<'_> {
    /// Runs `f` on the gradient buffer of `id`, allocating zeros on first use.
    /// Untracked inputs are skipped entirely.
    pub fn with(&mut self, id: Option<NodeId>, f: impl FnOnce(&mut [f64])) {
        if let Some(id) = id {
            let len = self.nodes[id].len;
            let g = self.grads[id].get_or_insert_with(|| vec![0.0; len]);
            f(g);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded entries.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Drops every recorded node. Arrays tracked by the old recording must not be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    /// Registers `x` as a leaf. Trainable leaves receive a gradient from `backward`.
    pub fn leaf(&mut self, x: &DiffArray, trainable: bool) -> Result<DiffArray> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            inputs: Vec::new(),
            len: x.len(),
        });
        Ok(DiffArray::from_parts(x.shape().to_vec(), x.shared(), Some(id)))
    }

    /// Shorthand for a trainable leaf.
    pub fn param(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.leaf(x, true)
    }

    pub(crate) fn record(
        &mut self,
        op: Op,
        inputs: Vec<Option<NodeId>>,
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
    ) -> Result<DiffArray> {
        if inputs.iter().all(Option::is_none) {
            return Ok(DiffArray::from_parts(shape, data, None));
        }
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let id = self.nodes.len();
        debug_assert!(inputs.iter().flatten().all(|&i| i < id));
        self.nodes.push(Node {
            op,
            inputs,
            len: data.len(),
        });
        Ok(DiffArray::from_parts(shape, data, Some(id)))
    }

    /// Records a custom op whose output element `b` depends only on the `b`-th
    /// contiguous block of `x`, with the per-element derivatives `local_grad`.
    pub(crate) fn record_blockwise(
        &mut self,
        x: &DiffArray,
        values: Vec<f64>,
        shape: Vec<usize>,
        local_grad: Vec<f64>,
    ) -> Result<DiffArray> {
        debug_assert_eq!(local_grad.len(), x.len());
        let block = if values.is_empty() { 0 } else { x.len() / values.len() };
        self.record(
            Op::Blockwise { local_grad, block },
            vec![x.node()],
            shape,
            Arc::new(values),
        )
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: &DiffArray) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if loss.len() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let root = loss.node().ok_or(Error::UntrackedLoss)?;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);
        let mut leaves = HashMap::new();

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf { trainable } = node.op {
                if trainable {
                    leaves.insert(id, g);
                }
                continue;
            }
            // Inputs always precede their consumer, so only the prefix is writable.
            let mut buf = GradBuf {
                grads: &mut grads[..id],
                nodes: &self.nodes,
            };
            backward_node(node, &g, &mut buf);
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { trainable: true }) {
                leaves.entry(id).or_insert_with(|| vec![0.0; node.len]);
            }
        }
        self.consumed = true;
        Ok(Gradients { grads: leaves })
    }
}

fn backward_node(node: &Node, g: &[f64], buf: &mut GradBuf<'_>) {
    let inputs = &node.inputs;
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Unary { kind, x, y } => elementwise::unary_backward(*kind, x, y, g, inputs[0], buf),
        Op::Binary { kind, a, b } => {
            elementwise::binary_backward(*kind, a, b, g, inputs[0], inputs[1], buf)
        }
        Op::MatMul { a, b, m, k, n } => {
            linalg::matmul_backward(a, b, *m, *k, *n, g, inputs[0], inputs[1], buf)
        }
        Op::BatchMatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
        } => linalg::bmm_backward(a, b, *batch, *m, *k, *n, g, inputs[0], inputs[1], buf),
        Op::Nlm(saved) => nlm::backward(saved, g, inputs, buf),
        Op::Softmax { y, dims } => axis::softmax_backward(y, *dims, g, inputs[0], buf),
        Op::LogSoftmax { y, dims } => axis::log_softmax_backward(y, *dims, g, inputs[0], buf),
        Op::LayerNorm {
            xhat,
            inv_std,
            dims,
        } => axis::layer_norm_backward(xhat, inv_std, *dims, g, inputs[0], buf),
        Op::Reduce { kind, dims, argmax } => {
            axis::reduce_backward(*kind, *dims, argmax, g, inputs[0], buf)
        }
        Op::Concat {
            outer,
            inner,
            sizes,
        } => axis::concat_backward(*outer, *inner, sizes, g, inputs, buf),
        Op::Slice { dims, start, len } => {
            axis::slice_backward(*dims, *start, *len, g, inputs[0], buf)
        }
        Op::IndexSelect { dims, indices } => {
            axis::index_select_backward(*dims, indices, g, inputs[0], buf)
        }
        Op::Permute { in_shape, perm } => axis::permute_backward(in_shape, perm, g, inputs[0], buf),
        Op::Reshape => buf.with(inputs[0], |gx| {
            gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }),
        Op::Blockwise { local_grad, block } => buf.with(inputs[0], |gx| {
            for (j, (gxj, lj)) in gx.iter_mut().zip(local_grad).enumerate() {
                *gxj += g[j / block] * lj;
            }
        }),
    }
}

/// Gradients of the trainable leaves, keyed by tape node.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Vec<f64>>,
}

impl Gradients {
    /// Gradient buffer for a tracked leaf, same length as the leaf.
    pub fn get(&self, x: &DiffArray) -> Option<&[f64]> {
        x.node().and_then(|id| self.grads.get(&id)).map(Vec::as_slice)
    }

    /// Gradient of `x` as an array shaped like `x`.
    pub fn wrt(&self, x: &DiffArray) -> Option<DiffArray> {
        self.get(x)
            .map(|g| DiffArray::new(x.shape().to_vec(), g.to_vec()).expect("gradient shape"))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
