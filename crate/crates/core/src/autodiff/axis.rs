use std::sync::Arc;

use crate::error::{Error, Result};

use super::array::{numel, split_axis, AxisDims, DiffArray};
use super::tape::{GradBuf, NodeId, Op, Tape};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[inline]
fn idx(d: AxisDims, o: usize, j: usize, i: usize) -> usize {
    (o * d.n + j) * d.inner + i
}

/// Index of the largest entry along `axis`, first occurrence on ties.
/// The result has the input shape with `axis` removed (row-major order).
pub fn argmax(x: &DiffArray, axis: usize) -> Result<Vec<usize>> {
    let d = split_axis(x.shape(), axis)?;
    if d.n == 0 {
        return Err(Error::EmptyReduction("argmax"));
    }
    let data = x.data();
    let mut out = Vec::with_capacity(d.outer * d.inner);
    for o in 0..d.outer {
        for i in 0..d.inner {
            out.push(argmax_strided(data, d, o, i));
        }
    }
    Ok(out)
}

fn argmax_strided(data: &[f64], d: AxisDims, o: usize, i: usize) -> usize {
    let mut best = 0;
    let mut best_v = data[idx(d, o, 0, i)];
    for j in 1..d.n {
        let v = data[idx(d, o, j, i)];
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

/// Argmax of a plain slice, first occurrence on ties.
pub fn argmax_slice(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Argmin of a plain slice, first occurrence on ties.
pub fn argmin_slice(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, bv)) if v >= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl Tape {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: &DiffArray, axis: usize) -> Result<DiffArray> {
        let d = split_axis(x.shape(), axis)?;
        let xd = x.data();
        let mut y = vec![0.0; xd.len()];
        for o in 0..d.outer {
            for i in 0..d.inner {
                let mx = (0..d.n)
                    .map(|j| xd[idx(d, o, j, i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..d.n {
                    let e = (xd[idx(d, o, j, i)] - mx).exp();
                    y[idx(d, o, j, i)] = e;
                    s += e;
                }
                for j in 0..d.n {
                    y[idx(d, o, j, i)] /= s;
                }
            }
        }
        let y = Arc::new(y);
        self.record(
            Op::Softmax {
                y: Arc::clone(&y),
                dims: d,
            },
            vec![x.node()],
            x.shape().to_vec(),
            y,
        )
    }

    /// Log-softmax along `axis` (log-sum-exp with max subtraction).
    pub fn log_softmax(&mut self, x: &DiffArray, axis: usize) -> Result<DiffArray> {
        let d = split_axis(x.shape(), axis)?;
        let xd = x.data();
        let mut y = vec![0.0; xd.len()];
        for o in 0..d.outer {
            for i in 0..d.inner {
                let mx = (0..d.n)
                    .map(|j| xd[idx(d, o, j, i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..d.n).map(|j| (xd[idx(d, o, j, i)] - mx).exp()).sum();
                let lse = mx + s.ln();
                for j in 0..d.n {
                    y[idx(d, o, j, i)] = xd[idx(d, o, j, i)] - lse;
                }
            }
        }
        let y = Arc::new(y);
        self.record(
            Op::LogSoftmax {
                y: Arc::clone(&y),
                dims: d,
            },
            vec![x.node()],
            x.shape().to_vec(),
            y,
        )
    }

    /// Normalizes to zero mean and unit (biased) variance along `axis`; no affine part.
    pub fn layer_norm(&mut self, x: &DiffArray, axis: usize) -> Result<DiffArray> {
        let d = split_axis(x.shape(), axis)?;
        if d.n == 0 {
            return Err(Error::EmptyReduction("layer_norm"));
        }
        let xd = x.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = Vec::with_capacity(d.outer * d.inner);
        let nf = d.n as f64;
        for o in 0..d.outer {
            for i in 0..d.inner {
                let mean = (0..d.n).map(|j| xd[idx(d, o, j, i)]).sum::<f64>() / nf;
                let var = (0..d.n)
                    .map(|j| {
                        let c = xd[idx(d, o, j, i)] - mean;
                        c * c
                    })
                    .sum::<f64>()
                    / nf;
                let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for j in 0..d.n {
                    xhat[idx(d, o, j, i)] = (xd[idx(d, o, j, i)] - mean) * r;
                }
                inv_std.push(r);
            }
        }
        let xhat = Arc::new(xhat);
        self.record(
            Op::LayerNorm {
                xhat: Arc::clone(&xhat),
                inv_std,
                dims: d,
            },
            vec![x.node()],
            x.shape().to_vec(),
            xhat,
        )
    }

    /// Reduces along `axis`, removing it from the shape.
    pub fn reduce(&mut self, kind: ReduceKind, x: &DiffArray, axis: usize) -> Result<DiffArray> {
        let d = split_axis(x.shape(), axis)?;
        if d.n == 0 {
            return Err(Error::EmptyReduction(match kind {
                ReduceKind::Sum => "sum",
                ReduceKind::Mean => "mean",
                ReduceKind::Max => "max",
            }));
        }
        let xd = x.data();
        let mut out = Vec::with_capacity(d.outer * d.inner);
        let mut arg = Vec::new();
        for o in 0..d.outer {
            for i in 0..d.inner {
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s: f64 = (0..d.n).map(|j| xd[idx(d, o, j, i)]).sum();
                        out.push(if kind == ReduceKind::Mean {
                            s / d.n as f64
                        } else {
                            s
                        });
                    }
                    ReduceKind::Max => {
                        let j = argmax_strided(xd, d, o, i);
                        arg.push(j);
                        out.push(xd[idx(d, o, j, i)]);
                    }
                }
            }
        }
        self.record(
            Op::Reduce {
                kind,
                dims: d,
                argmax: arg,
            },
            vec![x.node()],
            removed_axis(x.shape(), axis),
            Arc::new(out),
        )
    }

    pub fn sum(&mut self, x: &DiffArray, axis: usize) -> Result<DiffArray> {
        self.reduce(ReduceKind::Sum, x, axis)
    }

    pub fn mean(&mut self, x: &DiffArray, axis: usize) -> Result<DiffArray> {
        self.reduce(ReduceKind::Mean, x, axis)
    }

    pub fn max(&mut self, x: &DiffArray, axis: usize) -> Result<DiffArray> {
        self.reduce(ReduceKind::Max, x, axis)
    }

    /// Sum of every element, as a rank-0 array.
    pub fn sum_all(&mut self, x: &DiffArray) -> Result<DiffArray> {
        let flat = self.reshape(x, &[x.len()])?;
        self.sum(&flat, 0)
    }

    pub fn mean_all(&mut self, x: &DiffArray) -> Result<DiffArray> {
        let flat = self.reshape(x, &[x.len()])?;
        self.mean(&flat, 0)
    }

    pub fn reshape(&mut self, x: &DiffArray, shape: &[usize]) -> Result<DiffArray> {
        if numel(shape) != x.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        self.record(Op::Reshape, vec![x.node()], shape.to_vec(), x.shared())
    }

    /// Joins arrays along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[&DiffArray], axis: usize) -> Result<DiffArray> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero arrays".into()))?;
        let d0 = split_axis(first.shape(), axis)?;
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == first.rank()
                && s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(d0.outer * total * d0.inner);
        for o in 0..d0.outer {
            for (p, &n) in parts.iter().zip(&sizes) {
                let blk = n * d0.inner;
                out.extend_from_slice(&p.data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        self.record(
            Op::Concat {
                outer: d0.outer,
                inner: d0.inner,
                sizes,
            },
            parts.iter().map(|p| p.node()).collect(),
            shape,
            Arc::new(out),
        )
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&mut self, x: &DiffArray, axis: usize, start: usize, len: usize) -> Result<DiffArray> {
        let d = split_axis(x.shape(), axis)?;
        if start + len > d.n {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of range for axis {axis} of shape {:?}",
                start + len,
                x.shape()
            )));
        }
        let xd = x.data();
        let mut out = Vec::with_capacity(d.outer * len * d.inner);
        for o in 0..d.outer {
            let from = idx(d, o, start, 0);
            out.extend_from_slice(&xd[from..from + len * d.inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.record(
            Op::Slice {
                dims: d,
                start,
                len,
            },
            vec![x.node()],
            shape,
            Arc::new(out),
        )
    }

    /// Gathers entries along `axis`; indices may repeat.
    pub fn index_select(&mut self, x: &DiffArray, axis: usize, indices: &[usize]) -> Result<DiffArray> {
        let d = split_axis(x.shape(), axis)?;
        if let Some(&bad) = indices.iter().find(|&&j| j >= d.n) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for axis {axis} of shape {:?}",
                x.shape()
            )));
        }
        let xd = x.data();
        let mut out = Vec::with_capacity(d.outer * indices.len() * d.inner);
        for o in 0..d.outer {
            for &j in indices {
                let from = idx(d, o, j, 0);
                out.extend_from_slice(&xd[from..from + d.inner]);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = indices.len();
        self.record(
            Op::IndexSelect {
                dims: d,
                indices: indices.to_vec(),
            },
            vec![x.node()],
            shape,
            Arc::new(out),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: &DiffArray, perm: &[usize]) -> Result<DiffArray> {
        let shape = x.shape();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::InvalidArgument(format!(
                "invalid permutation {perm:?} for shape {shape:?}"
            )));
        }
        let out = permute_data(x.data(), shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        self.record(
            Op::Permute {
                in_shape: shape.to_vec(),
                perm: perm.to_vec(),
            },
            vec![x.node()],
            out_shape,
            Arc::new(out),
        )
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Row-major data of the permuted array.
fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            src += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    out
}

pub(super) fn softmax_backward(y: &[f64], d: AxisDims, g: &[f64], input: Option<NodeId>, buf: &mut GradBuf<'_>) {
    buf.with(input, |gx| {
        for o in 0..d.outer {
            for i in 0..d.inner {
                let dot: f64 = (0..d.n).map(|j| g[idx(d, o, j, i)] * y[idx(d, o, j, i)]).sum();
                for j in 0..d.n {
                    let k = idx(d, o, j, i);
                    gx[k] += y[k] * (g[k] - dot);
                }
            }
        }
    });
}

pub(super) fn log_softmax_backward(
    y: &[f64],
    d: AxisDims,
    g: &[f64],
    input: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    buf.with(input, |gx| {
        for o in 0..d.outer {
            for i in 0..d.inner {
                let gs: f64 = (0..d.n).map(|j| g[idx(d, o, j, i)]).sum();
                for j in 0..d.n {
                    let k = idx(d, o, j, i);
                    gx[k] += g[k] - y[k].exp() * gs;
                }
            }
        }
    });
}

pub(super) fn layer_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    d: AxisDims,
    g: &[f64],
    input: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    let nf = d.n as f64;
    buf.with(input, |gx| {
        for o in 0..d.outer {
            for i in 0..d.inner {
                let r = inv_std[o * d.inner + i];
                let mut sg = 0.0;
                let mut sgx = 0.0;
                for j in 0..d.n {
                    let k = idx(d, o, j, i);
                    sg += g[k];
                    sgx += g[k] * xhat[k];
                }
                for j in 0..d.n {
                    let k = idx(d, o, j, i);
                    gx[k] += r / nf * (nf * g[k] - sg - xhat[k] * sgx);
                }
            }
        }
    });
}

pub(super) fn reduce_backward(
    kind: ReduceKind,
    d: AxisDims,
    argmax: &[usize],
    g: &[f64],
    input: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    buf.with(input, |gx| {
        for o in 0..d.outer {
            for i in 0..d.inner {
                let go = g[o * d.inner + i];
                match kind {
                    ReduceKind::Sum => (0..d.n).for_each(|j| gx[idx(d, o, j, i)] += go),
                    ReduceKind::Mean => {
                        let s = go / d.n as f64;
                        (0..d.n).for_each(|j| gx[idx(d, o, j, i)] += s);
                    }
                    ReduceKind::Max => gx[idx(d, o, argmax[o * d.inner + i], i)] += go,
                }
            }
        }
    });
}

pub(super) fn concat_backward(
    outer: usize,
    inner: usize,
    sizes: &[usize],
    g: &[f64],
    inputs: &[Option<NodeId>],
    buf: &mut GradBuf<'_>,
) {
    let total: usize = sizes.iter().sum();
    let mut offset = 0;
    for (&n, &input) in sizes.iter().zip(inputs) {
        let blk = n * inner;
        buf.with(input, |gx| {
            for o in 0..outer {
                let src = o * total * inner + offset * inner;
                for (a, b) in gx[o * blk..(o + 1) * blk].iter_mut().zip(&g[src..src + blk]) {
                    *a += b;
                }
            }
        });
        offset += n;
    }
}

pub(super) fn slice_backward(
    d: AxisDims,
    start: usize,
    len: usize,
    g: &[f64],
    input: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    buf.with(input, |gx| {
        let blk = len * d.inner;
        for o in 0..d.outer {
            let dst = idx(d, o, start, 0);
            for (a, b) in gx[dst..dst + blk].iter_mut().zip(&g[o * blk..(o + 1) * blk]) {
                *a += b;
            }
        }
    });
}

pub(super) fn index_select_backward(
    d: AxisDims,
    indices: &[usize],
    g: &[f64],
    input: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    buf.with(input, |gx| {
        let mut src = 0;
        for o in 0..d.outer {
            for &j in indices {
                let dst = idx(d, o, j, 0);
                for (a, b) in gx[dst..dst + d.inner].iter_mut().zip(&g[src..src + d.inner]) {
                    *a += b;
                }
                src += d.inner;
            }
        }
    });
}

pub(super) fn permute_backward(
    in_shape: &[usize],
    perm: &[usize],
    g: &[f64],
    input: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    buf.with(input, |gx| {
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let back = permute_data(g, &out_shape, &inverse);
        gx.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
    });
}
