use std::sync::Arc;

use crate::error::{Error, Result};

use super::NodeId;

/// Dense row-major f64 array, optionally tracked by a [`Tape`](super::Tape).
///
/// The buffer is shared behind an `Arc`, so clones are cheap and untracked
/// arrays can be handed to other threads freely.
#[derive(Clone, Debug)]
pub struct DiffArray {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl DiffArray {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    /// One-dimensional array.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data: Arc::new(data),
            node: None,
        }
    }

    /// Rank-0 array.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self {
            shape,
            data: Arc::new(vec![value; n]),
            node: None,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<f64>>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn shared(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, no tape link.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "item() on array of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Element at a multi-index. Panics when out of bounds.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and data.
    pub fn bit_eq(&self, other: &DiffArray) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Decomposition of a shape around one axis: `outer × n × inner`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct AxisDims {
    pub outer: usize,
    pub n: usize,
    pub inner: usize,
}

pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<AxisDims> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    Ok(AxisDims {
        outer: shape[..axis].iter().product(),
        n: shape[axis],
        inner: shape[axis + 1..].iter().product(),
    })
}
