use std::sync::Arc;

use crate::error::{Error, Result};

use super::array::DiffArray;
use super::tape::{GradBuf, NodeId, Op, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Exp,
    Log,
    Neg,
    /// Smooth rectifier `x·σ(x)`.
    Silu,
    Sigmoid,
    Tanh,
    /// `max(x, 0)`. The derivative at exactly zero is taken as 1.
    ClampMinZero,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl UnaryKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Neg => -x,
            UnaryKind::Silu => x * sigmoid(x),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::ClampMinZero => x.max(0.0),
            UnaryKind::Sqrt => x.sqrt(),
        }
    }

    /// dy/dx given the input and the already computed output.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Neg => -1.0,
            UnaryKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::ClampMinZero => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Sqrt => 0.5 / y,
        }
    }
}

impl BinaryKind {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }

    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

/// Result shape of a binary op. Shapes must be equal, or one must be a
/// trailing suffix of the other (a rank-0 array broadcasts against anything).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || (a.len() >= b.len() && a.ends_with(b)) {
        Ok(a.to_vec())
    } else if b.len() > a.len() && b.ends_with(a) {
        Ok(b.to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Visits `(i, ia, ib)` triples of the broadcast iteration without modulo arithmetic.
#[inline]
fn for_each_broadcast(al: usize, bl: usize, mut f: impl FnMut(usize, usize, usize)) {
    let n = al.max(bl);
    if n == 0 {
        return;
    }
    if al == bl {
        for i in 0..n {
            f(i, i, i);
        }
    } else if al == n {
        for c in 0..n / bl {
            let base = c * bl;
            for j in 0..bl {
                f(base + j, base + j, j);
            }
        }
    } else {
        for c in 0..n / al {
            let base = c * al;
            for j in 0..al {
                f(base + j, j, base + j);
            }
        }
    }
}

impl Tape {
    pub fn elementwise_unary(&mut self, kind: UnaryKind, x: &DiffArray) -> Result<DiffArray> {
        let y: Vec<f64> = x.data().iter().map(|&v| kind.apply(v)).collect();
        let y = Arc::new(y);
        self.record(
            Op::Unary {
                kind,
                x: x.shared(),
                y: Arc::clone(&y),
            },
            vec![x.node()],
            x.shape().to_vec(),
            y,
        )
    }

    pub fn elementwise_binary(
        &mut self,
        kind: BinaryKind,
        a: &DiffArray,
        b: &DiffArray,
    ) -> Result<DiffArray> {
        let shape = broadcast_shape(kind.name(), a.shape(), b.shape())?;
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; ad.len().max(bd.len())];
        for_each_broadcast(ad.len(), bd.len(), |i, ia, ib| {
            out[i] = kind.apply(ad[ia], bd[ib]);
        });
        self.record(
            Op::Binary {
                kind,
                a: a.shared(),
                b: b.shared(),
            },
            vec![a.node(), b.node()],
            shape,
            Arc::new(out),
        )
    }

    pub fn add(&mut self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        self.elementwise_binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        self.elementwise_binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        self.elementwise_binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
        self.elementwise_binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, x: &DiffArray, factor: f64) -> Result<DiffArray> {
        self.mul(x, &DiffArray::scalar(factor))
    }

    pub fn add_scalar(&mut self, x: &DiffArray, c: f64) -> Result<DiffArray> {
        self.add(x, &DiffArray::scalar(c))
    }

    pub fn exp(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::Log, x)
    }

    pub fn neg(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::Neg, x)
    }

    pub fn silu(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::Silu, x)
    }

    pub fn sigmoid(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::Tanh, x)
    }

    pub fn clamp_min_zero(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::ClampMinZero, x)
    }

    pub fn sqrt(&mut self, x: &DiffArray) -> Result<DiffArray> {
        self.elementwise_unary(UnaryKind::Sqrt, x)
    }
}

pub(super) fn unary_backward(
    kind: UnaryKind,
    x: &[f64],
    y: &[f64],
    g: &[f64],
    input: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    buf.with(input, |gx| {
        for i in 0..g.len() {
            gx[i] += g[i] * kind.derivative(x[i], y[i]);
        }
    });
}

pub(super) fn binary_backward(
    kind: BinaryKind,
    a: &[f64],
    b: &[f64],
    g: &[f64],
    ia: Option<NodeId>,
    ib: Option<NodeId>,
    buf: &mut GradBuf<'_>,
) {
    let (al, bl) = (a.len(), b.len());
    buf.with(ia, |ga| {
        for_each_broadcast(al, bl, |i, ja, jb| {
            ga[ja] += match kind {
                BinaryKind::Add | BinaryKind::Sub => g[i],
                BinaryKind::Mul => g[i] * b[jb],
                BinaryKind::Div => g[i] / b[jb],
            };
        });
    });
    buf.with(ib, |gb| {
        for_each_broadcast(al, bl, |i, ja, jb| {
            gb[jb] += match kind {
                BinaryKind::Add => g[i],
                BinaryKind::Sub => -g[i],
                BinaryKind::Mul => g[i] * a[ja],
                BinaryKind::Div => -g[i] * a[ja] / (b[jb] * b[jb]),
            };
        });
    });
}
