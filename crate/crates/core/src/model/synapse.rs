use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, DiffArray, Tape};
use crate::error::{Error, Result};
use crate::params::{Linear, ParamStore};

use super::dropout;

/// Width of the U-Net bottleneck.
pub const BOTTLENECK: usize = 16;

/// Layer output widths, prefixed by the input width.
///
/// An odd depth `k` is a plain MLP with `k` hidden layers of width
/// `d_model` (depth 1 is the single-hidden-layer form; the no-NLM ablation
/// turns it into 3). An even depth `k` runs `k/2` layers interpolating
/// linearly from `input` down to [`BOTTLENECK`], then `k/2` layers back up to
/// `d_model`.
pub fn synapse_widths(input: usize, d_model: usize, depth: usize) -> Result<Vec<usize>> {
    if depth == 0 {
        return Err(Error::Config("synapse depth must be ≥ 1".into()));
    }
    if depth % 2 == 1 {
        let mut widths = vec![input];
        widths.resize(depth + 2, d_model);
        return Ok(widths);
    }
    let h = depth / 2;
    let lerp = |from: usize, to: usize, i: usize| {
        (from as f64 + (to as f64 - from as f64) * i as f64 / h as f64).round() as usize
    };
    let mut widths: Vec<usize> = (0..=h).map(|i| lerp(input, BOTTLENECK, i)).collect();
    widths.extend((1..=h).map(|j| lerp(BOTTLENECK, d_model, j)));
    Ok(widths)
}

/// Input width of each layer once the skip connections are concatenated.
fn layer_inputs(widths: &[usize], depth: usize) -> Vec<usize> {
    if depth % 2 == 1 {
        return widths[..widths.len() - 1].to_vec();
    }
    let h = depth / 2;
    (1..=depth)
        .map(|l| if l <= h { widths[l - 1] } else { widths[l - 1] + widths[depth - l] })
        .collect()
}

pub fn synapse_param_count(input: usize, d_model: usize, depth: usize) -> Result<usize> {
    let widths = synapse_widths(input, d_model, depth)?;
    Ok(layer_inputs(&widths, depth)
        .iter()
        .zip(&widths[1..])
        .map(|(&i, &o)| Linear::param_count(i, o))
        .sum())
}

/// The synapse model: mixes `concat(z, o)` into the next pre-activations.
///
/// On the way up each layer also reads the layer-normed activations of its
/// mirror layer on the way down.
#[derive(Clone, Debug)]
pub struct Synapse {
    layers: Vec<Linear>,
    depth: usize,
    act: Activation,
    dropout: f64,
}

impl Synapse {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        d_model: usize,
        depth: usize,
        act: Activation,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let widths = synapse_widths(input, d_model, depth)?;
        let layers = layer_inputs(&widths, depth)
            .iter()
            .zip(&widths[1..])
            .enumerate()
            .map(|(l, (&i, &o))| Linear::new(store, &format!("{name}.{l}"), i, o, rng))
            .collect();
        Ok(Self {
            layers,
            depth,
            act,
            dropout,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        x: &DiffArray,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DiffArray> {
        let last = self.layers.len() - 1;
        let h = self.depth / 2;
        let mut acts = vec![x.clone()];
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().expect("nonempty");
            let input = if self.depth % 2 == 0 && l >= h {
                let mirror = &acts[self.depth - l - 1];
                let skip = tape.layer_norm(mirror, mirror.rank() - 1)?;
                tape.concat(&[prev, &skip], prev.rank() - 1)?
            } else {
                prev.clone()
            };
            let input = dropout(tape, &input, self.dropout, rng.as_deref_mut())?;
            let y = layer.forward(tape, params, &input)?;
            let y = if l == last { y } else { self.activate(tape, &y)? };
            acts.push(y);
        }
        Ok(acts.pop().expect("nonempty"))
    }

    fn activate(&self, tape: &mut Tape, x: &DiffArray) -> Result<DiffArray> {
        match self.act {
            Activation::Silu => tape.silu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => tape.clamp_min_zero(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn width_schedule() {
        // 12 → 16 over two steps: 14; 16 → 8 over two steps: 12.
        assert_eq!(synapse_widths(12, 8, 4).unwrap(), vec![12, 14, 16, 12, 8]);
        assert_eq!(synapse_widths(40, 32, 2).unwrap(), vec![40, 16, 32]);
        // 100 → 16 in three steps: 72, 44, 16; 16 → 64: 32, 48, 64.
        assert_eq!(synapse_widths(100, 64, 6).unwrap(), vec![100, 72, 44, 16, 32, 48, 64]);
        assert_eq!(synapse_widths(5, 4, 1).unwrap(), vec![5, 4, 4]);
        assert_eq!(synapse_widths(5, 4, 3).unwrap(), vec![5, 4, 4, 4, 4]);
        assert!(synapse_widths(5, 4, 0).is_err());
    }

    #[test]
    fn param_count_matches_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (input, d, k) in [(12, 8, 4), (9, 5, 1), (9, 5, 3), (30, 20, 2), (7, 33, 6)] {
            let mut store = ParamStore::new();
            Synapse::new(&mut store, "syn", input, d, k, Activation::Silu, 0.0, &mut rng).unwrap();
            assert_eq!(store.count(), synapse_param_count(input, d, k).unwrap());
        }
        // k=4: 12·14+14 + 14·16+16 + 30·12+12 + 24·8+8
        assert_eq!(synapse_param_count(12, 8, 4).unwrap(), 182 + 240 + 372 + 200);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let syn = Synapse::new(&mut store, "syn", 6, 4, 1, Activation::Silu, 0.0, &mut rng).unwrap();
        let ids: Vec<_> = store.ids().collect();
        for id in &ids {
            let shape = store.get(*id).shape().to_vec();
            store.set(*id, DiffArray::zeros(shape)).unwrap();
        }
        let last_bias = ids[3];
        store.set(last_bias, DiffArray::from_vec(vec![1.0, -2.0, 0.5, 3.0])).unwrap();
        let x = DiffArray::new(vec![2, 6], (0..12).map(|v| v as f64).collect()).unwrap();
        let a = syn.forward(&mut Tape::new(), &store, &x, None).unwrap();
        assert_eq!(a.to_vec(), vec![1.0, -2.0, 0.5, 3.0, 1.0, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn dropout_only_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let syn = Synapse::new(&mut store, "syn", 6, 5, 4, Activation::Silu, 0.5, &mut rng).unwrap();
        let x = DiffArray::new(vec![1, 6], vec![0.3, -0.2, 1.0, 0.5, -1.5, 0.1]).unwrap();
        let a = syn.forward(&mut Tape::new(), &store, &x, None).unwrap();
        let b = syn.forward(&mut Tape::new(), &store, &x, None).unwrap();
        assert!(a.bit_eq(&b));
        let mut drop_rng = ChaCha8Rng::seed_from_u64(3);
        let c = syn.forward(&mut Tape::new(), &store, &x, Some(&mut drop_rng)).unwrap();
        assert!(!a.bit_eq(&c));
    }
}
