use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};

/// How neuron pairs are chosen for the two synchronization readouts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Pairing {
    /// All unordered pairs (self-pairs included) among `j` neurons per role.
    Dense { j_out: usize, j_action: usize },
    /// All cross pairs between two disjoint neuron subsets per role.
    SemiDense {
        j1_out: usize,
        j2_out: usize,
        j1_action: usize,
        j2_action: usize,
    },
    /// `n_self` self-pairs on distinct neurons, the rest drawn uniformly.
    Random {
        d_out: usize,
        d_action: usize,
        n_self: usize,
    },
}

impl Pairing {
    /// Number of pairs in the (output, action) selections.
    pub fn counts(&self) -> (usize, usize) {
        match *self {
            Pairing::Dense { j_out, j_action } => (j_out * (j_out + 1) / 2, j_action * (j_action + 1) / 2),
            Pairing::SemiDense {
                j1_out,
                j2_out,
                j1_action,
                j2_action,
            } => (j1_out * j2_out, j1_action * j2_action),
            Pairing::Random { d_out, d_action, .. } => (d_out, d_action),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Pairing::Dense { .. } => "dense",
            Pairing::SemiDense { .. } => "semi-dense",
            Pairing::Random { .. } => "random",
        }
    }

    /// Neurons reserved by the output and action roles together.
    fn reserved(&self) -> usize {
        match *self {
            Pairing::Dense { j_out, j_action } => j_out + j_action,
            Pairing::SemiDense {
                j1_out,
                j2_out,
                j1_action,
                j2_action,
            } => j1_out + j2_out + j1_action + j2_action,
            Pairing::Random { .. } => 0,
        }
    }
}

/// Task-specific front end producing the attention keys/values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackboneConfig {
    /// `±1` token embeddings plus sinusoidal positions, then linear and layer norm.
    Tokens { seq_len: usize, d_embed: usize },
    /// Square image cut into `patch×patch` tiles, each linearly embedded then
    /// layer-normed. No positional encoding.
    Patches {
        size: usize,
        channels: usize,
        patch: usize,
    },
    /// The raw input vector is the attention output at every tick.
    Direct { width: usize },
}

impl BackboneConfig {
    /// Number of key/value locations (1 for `Direct`).
    pub fn locations(&self) -> usize {
        match *self {
            BackboneConfig::Tokens { seq_len, .. } => seq_len,
            BackboneConfig::Patches { size, patch, .. } => {
                let per_side = size.div_ceil(patch);
                per_side * per_side
            }
            BackboneConfig::Direct { .. } => 1,
        }
    }

    pub fn uses_attention(&self) -> bool {
        !matches!(self, BackboneConfig::Direct { .. })
    }

    /// Shape of one input example.
    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            BackboneConfig::Tokens { seq_len, .. } => vec![seq_len],
            BackboneConfig::Patches { size, channels, .. } => vec![size, size, channels],
            BackboneConfig::Direct { width } => vec![width],
        }
    }

    pub(crate) fn validate(&self, d_input: usize) -> Result<()> {
        match *self {
            BackboneConfig::Tokens { seq_len, d_embed } => {
                if seq_len == 0 || d_embed == 0 {
                    return Err(Error::Config("tokens backbone needs seq_len, d_embed ≥ 1".into()));
                }
            }
            BackboneConfig::Patches { size, channels, patch } => {
                if size == 0 || channels == 0 || patch == 0 {
                    return Err(Error::Config("patch backbone needs size, channels, patch ≥ 1".into()));
                }
            }
            BackboneConfig::Direct { width } => {
                if width != d_input {
                    return Err(Error::Config(format!(
                        "direct backbone width {width} must equal d_input {d_input}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Output head geometry: `positions` independent predictions over `classes`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub positions: usize,
    pub classes: usize,
}

impl OutputSpec {
    pub fn width(&self) -> usize {
        self.positions * self.classes
    }
}

/// Architectural variant of the CTM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Standard,
    /// Synapse output is the post-activation directly; two extra synapse layers.
    NoNlm,
    /// Queries and outputs are projected straight from `z`.
    NoSync,
}

/// How synchronization is computed during the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncMode {
    /// α/β first-order recursions, O(pairs) per tick.
    #[default]
    Recursive,
    /// Full decay-weighted sums over the stored history, O(pairs·t) per tick.
    Direct,
}

fn default_heads() -> usize {
    1
}

/// Structural hyperparameters of a CTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtmConfig {
    /// Neuron count `D`.
    pub d_model: usize,
    /// Internal ticks `T`.
    pub ticks: usize,
    /// Pre-activation memory length `M`.
    pub memory: usize,
    /// Synapse depth `k`: even, or 1 for a single hidden layer.
    pub synapse_depth: usize,
    pub d_input: usize,
    /// Hidden width of each neuron-level model.
    pub d_hidden: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    pub pairing: Pairing,
    #[serde(default)]
    pub dropout: f64,
    pub backbone: BackboneConfig,
    pub output: OutputSpec,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub sync_mode: SyncMode,
}

impl CtmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.ticks == 0 || self.memory == 0 || self.d_hidden == 0 || self.d_input == 0 {
            return fail("d_model, ticks, memory, d_hidden and d_input must be ≥ 1".into());
        }
        if self.synapse_depth == 0 || (self.synapse_depth != 1 && self.synapse_depth % 2 == 1) {
            return fail(format!("synapse depth {} must be even or 1", self.synapse_depth));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.output.positions == 0 || self.output.classes == 0 {
            return fail("output positions and classes must be ≥ 1".into());
        }
        self.backbone.validate(self.d_input)?;
        if self.backbone.uses_attention() && (self.n_heads == 0 || self.d_input % self.n_heads != 0) {
            return fail(format!("{} heads do not divide d_input {}", self.n_heads, self.d_input));
        }
        if self.variant != Variant::NoSync {
            let (p_out, p_action) = self.pairing.counts();
            if p_out == 0 || (self.backbone.uses_attention() && p_action == 0) {
                return fail("pairing selects no pairs".into());
            }
            let reserved = self.pairing.reserved();
            if reserved > self.d_model {
                return fail(format!(
                    "{} pairing needs {reserved} distinct neurons but d_model is {}",
                    self.pairing.tag(),
                    self.d_model
                ));
            }
            if let Pairing::Random { d_out, d_action, n_self } = self.pairing {
                if n_self > d_out || (self.backbone.uses_attention() && n_self > d_action) {
                    return fail(format!("n_self {n_self} exceeds a pair budget ({d_out}, {d_action})"));
                }
                if n_self > self.d_model {
                    return fail(format!("n_self {n_self} exceeds d_model {}", self.d_model));
                }
            }
        }
        Ok(())
    }

    /// Effective synapse depth (ablating the NLMs adds two layers).
    pub fn effective_depth(&self) -> usize {
        match self.variant {
            Variant::NoNlm => self.synapse_depth + 2,
            _ => self.synapse_depth,
        }
    }

    pub fn has_nlm(&self) -> bool {
        self.variant != Variant::NoNlm
    }

    pub fn has_sync(&self) -> bool {
        self.variant != Variant::NoSync
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> CtmConfig {
        CtmConfig {
            d_model: 8,
            ticks: 3,
            memory: 3,
            synapse_depth: 1,
            d_input: 4,
            d_hidden: 2,
            n_heads: 2,
            pairing: Pairing::Dense { j_out: 4, j_action: 4 },
            dropout: 0.0,
            backbone: BackboneConfig::Tokens { seq_len: 4, d_embed: 3 },
            output: OutputSpec {
                positions: 4,
                classes: 2,
            },
            activation: Activation::Silu,
            variant: Variant::Standard,
            sync_mode: SyncMode::Recursive,
        }
    }

    #[test]
    fn pair_counts() {
        assert_eq!(Pairing::Dense { j_out: 32, j_action: 1 }.counts(), (528, 1));
        let semi = Pairing::SemiDense {
            j1_out: 3,
            j2_out: 4,
            j1_action: 2,
            j2_action: 2,
        };
        assert_eq!(semi.counts(), (12, 4));
    }

    #[test]
    fn validation() {
        base().validate().unwrap();
        let mut c = base();
        c.synapse_depth = 3;
        assert!(c.validate().is_err());
        let mut c = base();
        c.pairing = Pairing::Dense { j_out: 5, j_action: 4 };
        assert!(c.validate().is_err());
        let mut c = base();
        c.pairing = Pairing::Random {
            d_out: 4,
            d_action: 8,
            n_self: 5,
        };
        assert!(c.validate().is_err());
        let mut c = base();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = base();
        c.variant = Variant::NoSync;
        c.pairing = Pairing::Dense { j_out: 50, j_action: 50 };
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_rejects_unknown_keys() {
        let text = toml::to_string(&base()).unwrap();
        let back: CtmConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, base());
        let bad = text.replace("kind = \"dense\"", "kind = \"dense\"\nj_typo = 3");
        assert!(toml::from_str::<CtmConfig>(&bad).is_err());
        let bad = format!("extra = 1\n{text}");
        assert!(toml::from_str::<CtmConfig>(&bad).is_err());
    }
}
