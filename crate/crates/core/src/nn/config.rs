//! Declarative network description, stored as TOML (`*.cfg`).
//!
//! ```toml
//! name = "toy"
//! input = [32, 32, 3]          # height, width, channels
//! num_classes = 2
//! dropout = 0.0
//!
//! [[stem]]
//! conv = 3                      # kernel size; conv -> BN -> ReLU
//! filters = 8
//!
//! [[stem]]
//! pool = 2                      # max-pool window (stride defaults to window)
//!
//! [[stages]]
//! id = "s1"
//! blocks = 1
//! block = { merge_filters = 12, branches = [
//!     [{ conv = 1, filters = 4 }],
//!     [{ conv = 3, filters = 4 }],
//!     [{ pool = 3 }, { conv = 1, filters = 4 }],
//! ] }
//! downsample = { window = 2 }
//!
//! [[attention]]
//! sources = ["s1"]
//! target = "c1"
//! ```
//!
//! A block may give `branch_filters = [a, b, c, d]` instead of `branches`,
//! which expands to the default four-branch layout: 1×1; 3×3; two stacked
//! 3×3; 3×3 max-pool followed by 1×1.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Padding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub name: String,
    /// `[height, width, channels]` of one input image.
    pub input: [usize; 3],
    pub num_classes: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub stem: Vec<StemLayer>,
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub attention: Vec<AttentionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum StemLayer {
    Conv {
        conv: usize,
        filters: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    Pool {
        pool: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub id: String,
    pub blocks: usize,
    pub block: BlockSpec,
    /// Expected input channels; checked against the preceding layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<Downsample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Downsample {
    pub window: usize,
    #[serde(default)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub merge_filters: usize,
    #[serde(default)]
    pub factorized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branches: Option<Vec<Vec<BranchLayer>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_filters: Option<[usize; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum BranchLayer {
    /// Square `conv × conv` convolution, same padding, stride 1.
    Conv { conv: usize, filters: usize },
    /// Max-pool `pool × pool`, same padding, stride 1.
    Pool { pool: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    /// Stage ids whose last pre-downsampling feature maps are attended.
    pub sources: Vec<String>,
    /// Stage id whose output is augmented.
    pub target: String,
    /// If given, must equal the target's channel count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_filters: Option<usize>,
}

fn one() -> usize {
    1
}

/// Fully resolved configuration of one residual-inception block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InceptionBlockConfig {
    pub input_channels: usize,
    pub branches: Vec<Vec<BranchLayer>>,
    pub merge_filters: usize,
    pub factorized: bool,
}

impl InceptionBlockConfig {
    /// Four default branches with the given filter counts.
    pub fn standard(input_channels: usize, filters: [usize; 4], merge_filters: usize) -> Self {
        Self {
            input_channels,
            branches: default_branches(filters),
            merge_filters,
            factorized: false,
        }
    }

    pub fn factorized(mut self, on: bool) -> Self {
        self.factorized = on;
        self
    }

    /// Channels entering the merge convolution.
    pub fn concat_channels(&self) -> usize {
        self.branches
            .iter()
            .map(|branch| {
                branch.iter().fold(self.input_channels, |c, layer| match layer {
                    BranchLayer::Conv { filters, .. } => *filters,
                    BranchLayer::Pool { .. } => c,
                })
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("block input channels must be > 0".into()));
        }
        if self.merge_filters == 0 {
            return Err(Error::Config("merge_filters must be > 0".into()));
        }
        if self.branches.is_empty() || self.branches.iter().any(Vec::is_empty) {
            return Err(Error::Config("every block needs non-empty branches".into()));
        }
        for layer in self.branches.iter().flatten() {
            match *layer {
                BranchLayer::Conv { conv, filters } if conv == 0 || filters == 0 => {
                    return Err(Error::Config(format!(
                        "branch conv {conv}x{conv} with {filters} filters is invalid"
                    )))
                }
                BranchLayer::Pool { pool: 0 } => {
                    return Err(Error::Config("branch pool window must be > 0".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn default_branches(f: [usize; 4]) -> Vec<Vec<BranchLayer>> {
    vec![
        vec![BranchLayer::Conv { conv: 1, filters: f[0] }],
        vec![BranchLayer::Conv { conv: 3, filters: f[1] }],
        vec![
            BranchLayer::Conv { conv: 3, filters: f[2] },
            BranchLayer::Conv { conv: 3, filters: f[2] },
        ],
        vec![
            BranchLayer::Pool { pool: 3 },
            BranchLayer::Conv { conv: 1, filters: f[3] },
        ],
    ]
}

impl BlockSpec {
    pub fn resolve(&self, input_channels: usize) -> Result<InceptionBlockConfig> {
        let branches = match (&self.branches, self.branch_filters) {
            (Some(b), None) => b.clone(),
            (None, Some(f)) => default_branches(f),
            _ => {
                return Err(Error::Config(
                    "block needs exactly one of `branches` or `branch_filters`".into(),
                ))
            }
        };
        let cfg = InceptionBlockConfig {
            input_channels,
            branches,
            merge_filters: self.merge_filters,
            factorized: self.factorized,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Downsample {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window)
    }
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("network config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    /// Structural checks that do not need shape propagation; the rest
    /// (channel chain, spatial extents) is checked by [`super::count_layers_and_params`].
    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero", self.input)));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        let mut seen = HashSet::new();
        for stage in &self.stages {
            if stage.id.is_empty() || !seen.insert(stage.id.as_str()) {
                return Err(Error::Config(format!(
                    "stage id {:?} is empty or duplicated",
                    stage.id
                )));
            }
            if stage.blocks == 0 {
                return Err(Error::Config(format!("stage {} has no blocks", stage.id)));
            }
        }
        let position = |id: &str| self.stages.iter().position(|s| s.id == id);
        for att in &self.attention {
            let target = position(&att.target).ok_or_else(|| {
                Error::Config(format!("attention target {:?} is not a stage", att.target))
            })?;
            if att.sources.is_empty() {
                return Err(Error::Config(format!(
                    "attention on {} has no sources",
                    att.target
                )));
            }
            for src in &att.sources {
                match position(src) {
                    Some(p) if p < target => {}
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "attention source {src} does not precede target {}",
                            att.target
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "attention source {src:?} is not a stage"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// 64-bit FNV-1a hash of the architecture (everything except `name`
    /// and `dropout`), used to match checkpoints to configs.
    pub fn fingerprint(&self) -> u64 {
        let mut canon = self.clone();
        canon.name.clear();
        canon.dropout = 0.0;
        fnv1a(canon.to_toml().as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
name = "t"
input = [8, 8, 3]
num_classes = 2

[[stem]]
conv = 3
filters = 4

[[stem]]
pool = 2

[[stages]]
id = "a"
blocks = 1
block = { merge_filters = 6, branch_filters = [2, 2, 2, 2] }

[[stages]]
id = "b"
blocks = 1
block = { merge_filters = 6, factorized = true, branches = [[{ conv = 3, filters = 2 }]] }

[[attention]]
sources = ["a"]
target = "b"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = NetworkConfig::from_toml(TOY).unwrap();
        assert_eq!(cfg.stem.len(), 2);
        assert!(matches!(cfg.stem[1], StemLayer::Pool { pool: 2, stride: None }));
        let again = NetworkConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.fingerprint(), again.fingerprint());
    }

    #[test]
    fn fingerprint_ignores_name_and_dropout() {
        let cfg = NetworkConfig::from_toml(TOY).unwrap();
        let mut other = cfg.clone();
        other.name = "renamed".into();
        other.dropout = 0.3;
        assert_eq!(cfg.fingerprint(), other.fingerprint());
        other.num_classes = 14;
        assert_ne!(cfg.fingerprint(), other.fingerprint());
    }

    #[test]
    fn rejects_bad_attention() {
        let bad = TOY.replace("sources = [\"a\"]", "sources = [\"b\"]");
        assert!(matches!(NetworkConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = TOY.replace("target = \"b\"", "target = \"zzz\"");
        assert!(matches!(NetworkConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn block_needs_one_branch_description() {
        let spec = BlockSpec {
            merge_filters: 4,
            factorized: false,
            branches: None,
            branch_filters: None,
        };
        assert!(spec.resolve(3).is_err());
        let spec = BlockSpec {
            branch_filters: Some([1, 2, 3, 4]),
            ..spec
        };
        let cfg = spec.resolve(3).unwrap();
        assert_eq!(cfg.concat_channels(), 10);
        assert!(InceptionBlockConfig::standard(3, [1, 1, 1, 1], 0).validate().is_err());
    }
}
