use std::sync::Arc;

use crate::error::{Error, Result};

use super::array::DiffArray;
use super::gemm::gemm;
use super::tape::{GradBuf, NodeId, Op, Tape};

impl Tape {
    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
        self.record(
            Op::MatMul {
                a: a.shared(),
                b: b.shared(),
                m,
                k,
                n,
            },
            vec![a.node(), b.node()],
            vec![m, n],
            Arc::new(out),
        )
    }

    /// Batched product over matching leading dims: `a[..., m, k] · b[..., k, n]`.
    pub fn batch_matmul(&mut self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        let (sa, sb) = (a.shape(), b.shape());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(Error::ShapeMismatch {
                op: "batch_matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let batch: usize = sa[..r - 2].iter().product();
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (a.data(), b.data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        self.record(
            Op::BatchMatMul {
                a: a.shared(),
                b: b.shared(),
                batch,
                m,
                k,
                n,
            },
            vec![a.node(), b.node()],
            shape,
            Arc::new(out),
        )
    }

    /// Affine map over the last axis: `x[..., in] · w[in×out] + bias[out]`.
    pub fn linear(
        &mut self,
        x: &DiffArray,
        w: &DiffArray,
        bias: Option<&DiffArray>,
    ) -> Result<DiffArray> {
        let xs = x.shape();
        if xs.is_empty() || w.rank() != 2 || xs[xs.len() - 1] != w.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: xs.to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let inw = xs[xs.len() - 1];
        let rows = x.len() / inw.max(1);
        let flat = self.reshape(x, &[rows, inw])?;
        let mut y = self.matmul(&flat, w)?;
        if let Some(b) = bias {
            y = self.add(&y, b)?;
        }
        let mut out_shape = xs[..xs.len() - 1].to_vec();
        out_shape.push(w.shape()[1]);
        self.reshape(&y, &out_shape)
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    g: &[f64],
    ia: Option<NodeId>,
    ib: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    // dA = G·Bᵀ, dB = Aᵀ·G
    buf.with(ia, |ga| gemm(m, n, k, g, false, b, true, ga, 1.0));
    buf.with(ib, |gb| gemm(k, m, n, a, true, g, false, gb, 1.0));
}

#[allow(clippy::too_many_arguments)]
pub(super) fn bmm_backward(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    g: &[f64],
    ia: Option<NodeId>,
    ib: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    buf.with(ia, |ga| {
        for i in 0..batch {
            gemm(
                m,
                n,
                k,
                &g[i * m * n..(i + 1) * m * n],
                false,
                &b[i * k * n..(i + 1) * k * n],
                true,
                &mut ga[i * m * k..(i + 1) * m * k],
                1.0,
            );
        }
    });
    buf.with(ib, |gb| {
        for i in 0..batch {
            gemm(
                k,
                m,
                n,
                &a[i * m * k..(i + 1) * m * k],
                true,
                &g[i * m * n..(i + 1) * m * n],
                false,
                &mut gb[i * k * n..(i + 1) * k * n],
                1.0,
            );
        }
    });
}
