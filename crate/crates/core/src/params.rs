//! Named parameter storage shared by every model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffArray, Gradients, Tape};
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered list of named tensors. Models hold [`ParamId`]s and read values
/// from whichever store they are given, so the same model can run on plain
/// values (inference) or on a copy attached to a tape (training).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DiffArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DiffArray) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &DiffArray {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: DiffArray) -> Result<()> {
        let old = &self.values[id.0];
        if old.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                lhs: old.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value.detach();
        Ok(())
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters, enumerated tensor by tensor.
    pub fn count(&self) -> usize {
        self.values.iter().map(DiffArray::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DiffArray)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Copy of the store whose tensors are trainable leaves of `tape`.
    pub fn attach(&self, tape: &mut Tape) -> Result<ParamStore> {
        let values = self
            .values
            .iter()
            .map(|v| tape.param(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamStore {
            names: self.names.clone(),
            values,
        })
    }

    /// Gradients for every tensor of an attached store, in store order.
    pub fn gradients(&self, grads: &Gradients) -> Result<Vec<Vec<f64>>> {
        self.iter()
            .map(|(name, v)| {
                grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::InvalidArgument(format!("no gradient for parameter {name}")))
            })
            .collect()
    }

    /// Same names, new values (shapes must match).
    pub fn with_values(&self, values: &[DiffArray]) -> Result<ParamStore> {
        if values.len() != self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} parameters",
                values.len(),
                self.values.len()
            )));
        }
        for (old, new) in self.values.iter().zip(values) {
            if old.shape() != new.shape() {
                return Err(Error::ShapeMismatch {
                    op: "param values",
                    lhs: old.shape().to_vec(),
                    rhs: new.shape().to_vec(),
                });
            }
        }
        Ok(ParamStore {
            names: self.names.clone(),
            values: values.to_vec(),
        })
    }

    pub fn values(&self) -> &[DiffArray] {
        &self.values
    }

    /// Overwrites the flat data of tensor `i` (used by optimizers).
    pub fn update_flat(&mut self, i: usize, data: Vec<f64>) -> Result<()> {
        let shape = self.values[i].shape().to_vec();
        self.values[i] = DiffArray::new(shape, data)?;
        Ok(())
    }

    pub fn value_at(&self, i: usize) -> &DiffArray {
        &self.values[i]
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.bit_eq(b))
    }
}

/// Uniform in `±1/√fan_in`.
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> DiffArray {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> DiffArray {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    DiffArray::new(shape.to_vec(), data).expect("init shape")
}

/// Dense affine layer `x·W + b` over the last axis.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_fan_in(rng, &[input, output], input));
        let bias = store.add(format!("{name}.bias"), uniform_fan_in(rng, &[output], input));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn param_count(input: usize, output: usize) -> usize {
        input * output + output
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: &DiffArray) -> Result<DiffArray> {
        tape.linear(x, params.get(self.weight), Some(params.get(self.bias)))
    }
}

/// Layer norm over the last axis followed by a learned scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), DiffArray::full([width], 1.0)),
            shift: store.add(format!("{name}.shift"), DiffArray::zeros([width])),
        }
    }

    pub fn param_count(width: usize) -> usize {
        2 * width
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: &DiffArray) -> Result<DiffArray> {
        let n = tape.layer_norm(x, x.rank() - 1)?;
        let n = tape.mul(&n, params.get(self.gain))?;
        tape.add(&n, params.get(self.shift))
    }
}
