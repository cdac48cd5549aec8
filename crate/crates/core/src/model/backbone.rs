use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffArray, Tape};
use crate::error::{Error, Result};
use crate::params::{uniform, LayerNorm, Linear, ParamId, ParamStore};

use super::config::BackboneConfig;

/// Feature extractor turning one task input into attention keys/values.
#[derive(Clone, Debug)]
pub enum Backbone {
    Tokens {
        embed: ParamId,
        positions: DiffArray,
        proj: Linear,
        norm: LayerNorm,
        seq_len: usize,
    },
    Patches {
        proj: Linear,
        norm: LayerNorm,
        size: usize,
        channels: usize,
        patch: usize,
    },
    Direct {
        width: usize,
    },
}

/// Sinusoidal absolute position table `[len×d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> DiffArray {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    DiffArray::new(vec![len, d], data).expect("position table shape")
}

/// Rearranges `[B×n×n×C]` images into `[B×L×(p·p·C)]` patches, padding the
/// bottom/right edge with zeros up to a multiple of `p`.
pub fn patchify(images: &DiffArray, patch: usize) -> Result<DiffArray> {
    let s = images.shape();
    if s.len() != 4 || s[1] != s[2] || patch == 0 {
        return Err(Error::ShapeMismatch {
            op: "patchify",
            lhs: s.to_vec(),
            rhs: vec![patch],
        });
    }
    let (b, n, c) = (s[0], s[1], s[3]);
    let per_side = n.div_ceil(patch);
    let feat = patch * patch * c;
    let src = images.data();
    let mut out = vec![0.0; b * per_side * per_side * feat];
    for bi in 0..b {
        for pr in 0..per_side {
            for pc in 0..per_side {
                let base = ((bi * per_side + pr) * per_side + pc) * feat;
                for dr in 0..patch {
                    for dc in 0..patch {
                        let (r, col) = (pr * patch + dr, pc * patch + dc);
                        if r >= n || col >= n {
                            continue;
                        }
                        let from = ((bi * n + r) * n + col) * c;
                        let to = base + (dr * patch + dc) * c;
                        out[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
    }
    DiffArray::new(vec![b, per_side * per_side, feat], out)
}

impl Backbone {
    pub fn new(store: &mut ParamStore, config: &BackboneConfig, d_input: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate(d_input)?;
        Ok(match *config {
            BackboneConfig::Tokens { seq_len, d_embed } => Backbone::Tokens {
                embed: store.add("backbone.embed", uniform(rng, &[2, d_embed], 1.0)),
                positions: sinusoidal_positions(seq_len, d_embed),
                proj: Linear::new(store, "backbone.proj", d_embed, d_input, rng),
                norm: LayerNorm::new(store, "backbone.norm", d_input),
                seq_len,
            },
            BackboneConfig::Patches { size, channels, patch } => Backbone::Patches {
                proj: Linear::new(store, "backbone.proj", patch * patch * channels, d_input, rng),
                norm: LayerNorm::new(store, "backbone.norm", d_input),
                size,
                channels,
                patch,
            },
            BackboneConfig::Direct { width } => Backbone::Direct { width },
        })
    }

    pub fn param_count(config: &BackboneConfig, d_input: usize) -> usize {
        match *config {
            BackboneConfig::Tokens { d_embed, .. } => {
                2 * d_embed + Linear::param_count(d_embed, d_input) + LayerNorm::param_count(d_input)
            }
            BackboneConfig::Patches { channels, patch, .. } => {
                Linear::param_count(patch * patch * channels, d_input) + LayerNorm::param_count(d_input)
            }
            BackboneConfig::Direct { .. } => 0,
        }
    }

    /// Features `[B×L×d_input]`, or the untouched `[B×width]` input for `Direct`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, input: &DiffArray) -> Result<DiffArray> {
        let s = input.shape();
        let bad = |expected: Vec<usize>| Error::ShapeMismatch {
            op: "backbone input",
            lhs: s.to_vec(),
            rhs: expected,
        };
        match self {
            Backbone::Tokens {
                embed,
                positions,
                proj,
                norm,
                seq_len,
            } => {
                if s.len() != 2 || s[1] != *seq_len {
                    return Err(bad(vec![0, *seq_len]));
                }
                let tokens: Vec<usize> = input.data().iter().map(|&v| usize::from(v > 0.0)).collect();
                let x = tape.index_select(params.get(*embed), 0, &tokens)?;
                let d_embed = positions.shape()[1];
                let x = tape.reshape(&x, &[s[0], *seq_len, d_embed])?;
                let x = tape.add(&x, positions)?;
                let x = proj.forward(tape, params, &x)?;
                norm.forward(tape, params, &x)
            }
            Backbone::Patches {
                proj,
                norm,
                size,
                channels,
                patch,
            } => {
                if s.len() != 4 || s[1] != *size || s[2] != *size || s[3] != *channels {
                    return Err(bad(vec![0, *size, *size, *channels]));
                }
                let x = patchify(input, *patch)?;
                let x = proj.forward(tape, params, &x)?;
                norm.forward(tape, params, &x)
            }
            Backbone::Direct { width } => {
                if s.len() != 2 || s[1] != *width {
                    return Err(bad(vec![0, *width]));
                }
                Ok(input.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn positions_table() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(pe.to_vec()[..4], [0.0, 1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(pe.at(&[2, 0]), 2f64.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(pe.at(&[2, 3]), (2.0 * 0.01f64).cos(), epsilon = 1e-15);
    }

    #[test]
    fn patchify_layout_and_padding() {
        // 3×3 single channel image, 2×2 patches → 4 patches, zero padded.
        let img = DiffArray::new(vec![1, 3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[1, 4, 4]);
        assert_eq!(
            p.to_vec(),
            vec![1.0, 2.0, 4.0, 5.0, 3.0, 0.0, 6.0, 0.0, 7.0, 8.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn counts_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let configs = [
            BackboneConfig::Tokens { seq_len: 5, d_embed: 6 },
            BackboneConfig::Patches {
                size: 5,
                channels: 3,
                patch: 2,
            },
        ];
        let inputs = [
            DiffArray::new(vec![2, 5], vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0]).unwrap(),
            DiffArray::zeros([2, 5, 5, 3]),
        ];
        for (cfg, x) in configs.iter().zip(&inputs) {
            let mut store = ParamStore::new();
            let bb = Backbone::new(&mut store, cfg, 8, &mut rng).unwrap();
            assert_eq!(store.count(), Backbone::param_count(cfg, 8));
            let y = bb.forward(&mut Tape::new(), &store, x).unwrap();
            assert_eq!(y.shape(), &[2, cfg.locations(), 8]);
        }
    }
}
