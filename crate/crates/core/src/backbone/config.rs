//! Model configuration and the registry of published variants.

use serde::{Deserialize, Serialize};

use crate::attention::{default_gammas, AttnConfig, AttnKind, PeKind};
use crate::error::{config_err, Result};

use super::permutation::{parse_permutation, MiddleMode, PermutationSpec};

/// Number of classes for the default English alphabet: 26 letters, 10
/// digits and the blank.
pub const ENGLISH_CLASSES: usize = 37;

/// Grid of the learned absolute position table (a 32×96 input after patch
/// embedding).
pub const APE_GRID: (usize, usize) = (8, 24);

/// Everything needed to build a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    #[serde(with = "perm_string")]
    pub permutation: PermutationSpec,
    pub pe_kind: PeKind,
    /// Stripe width for stages 1–3.
    pub split_window: [usize; 3],
    /// Spatial reduction ratio of OSRA mixers.
    pub reduction_ratio: usize,
    pub num_classes: usize,
    /// Dropout probability after the height-pooling projection.
    pub dropout: f64,
}

mod perm_string {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &PermutationSpec, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&p.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<PermutationSpec, D::Error> {
        let s = String::deserialize(d)?;
        parse_permutation(&s).map_err(serde::de::Error::custom)
    }
}

/// Registry names of the published variants.
pub const VARIANTS: [&str; 4] = ["sviptr-v1-t", "sviptr-v2-t", "sviptr-v2-b", "sviptr-v1-l"];

impl VariantConfig {
    pub fn new(
        channels: [usize; 4],
        depths: [usize; 4],
        heads: [usize; 4],
        permutation: &str,
    ) -> Result<Self> {
        Ok(Self {
            channels,
            depths,
            heads,
            permutation: parse_permutation(permutation)?,
            pe_kind: PeKind::Lepe,
            split_window: [1, 2, 2],
            reduction_ratio: 2,
            num_classes: ENGLISH_CLASSES,
            dropout: 0.1,
        })
    }

    /// A published variant by registry name.
    pub fn variant(name: &str) -> Result<Self> {
        match name {
            "sviptr-v1-t" => Self::new([64, 128, 256, 192], [3, 3, 3, 3], [2, 4, 4, 8], "[L1][L1G2][G1]"),
            "sviptr-v1-l" => Self::new([192, 256, 512, 384], [3, 7, 2, 9], [6, 8, 8, 16], "[L2][L2G2][G1]"),
            "sviptr-v2-t" => Self::new([64, 128, 256, 192], [3, 3, 3, 3], [2, 4, 4, 8], "[L1][L1//G2][G1]"),
            // Stage 4 uses 8 heads: 12 does not divide 256 channels.
            "sviptr-v2-b" => Self::new([128, 256, 384, 256], [3, 6, 6, 9], [4, 8, 8, 8], "[L2][L2//G2][G1]"),
            _ => Err(config_err!("unknown variant '{name}' (known: {})", VARIANTS.join(", "))),
        }
    }

    /// Attention config of a single-kind block at `stage` (0-based).
    pub fn block_attn(&self, stage: usize, kind: AttnKind) -> AttnConfig {
        self.attn(kind, self.channels[stage], self.heads[stage], stage)
    }

    /// Local and global branch configs of a parallel block at `stage`.
    pub fn parallel_attn(&self, stage: usize) -> (AttnConfig, AttnConfig) {
        let c = self.channels[stage] / 2;
        let h = self.heads[stage];
        let local_heads = (h / 2).max(1);
        let global_heads = (h - h / 2).max(1);
        (
            self.attn(self.permutation.middle_local, c, local_heads, stage),
            self.attn(self.permutation.middle_global, c, global_heads, stage),
        )
    }

    fn attn(&self, kind: AttnKind, dim: usize, heads: usize, stage: usize) -> AttnConfig {
        AttnConfig {
            dim,
            heads,
            kind,
            split_window: self.split_window.get(stage).copied().unwrap_or(1),
            reduction_ratio: self.reduction_ratio,
            gammas: default_gammas(heads),
            lepe: self.pe_kind == PeKind::Lepe,
        }
    }

    /// Kinds of the blocks of `stage`, in order, for series stages.
    pub fn series_kinds(&self, stage: usize) -> Vec<AttnKind> {
        let n = self.depths[stage];
        let p = &self.permutation;
        match stage {
            0 => vec![p.stage1; n],
            3 => vec![p.stage4; n],
            _ => {
                let locals = n.div_ceil(2);
                (0..n)
                    .map(|i| if i < locals { p.middle_local } else { p.middle_global })
                    .collect()
            }
        }
    }

    pub fn is_parallel_stage(&self, stage: usize) -> bool {
        (stage == 1 || stage == 2) && self.permutation.middle_mode == MiddleMode::Parallel
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.depths.contains(&0) || self.heads.contains(&0) {
            return Err(config_err!("channels, depths and heads must all be positive"));
        }
        if !self.channels[0].is_multiple_of(2) {
            return Err(config_err!("stage-1 width {} must be even for the patch embedding", self.channels[0]));
        }
        if self.num_classes < 2 {
            return Err(config_err!("need at least 2 classes (blank + 1 symbol), got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout {} outside [0, 1)", self.dropout));
        }
        for s in 0..4 {
            if self.is_parallel_stage(s) {
                if !self.channels[s].is_multiple_of(2) {
                    return Err(config_err!("stage {} width {} must be even for parallel blocks", s + 1, self.channels[s]));
                }
                let (l, g) = self.parallel_attn(s);
                l.validate().map_err(|e| config_err!("stage {} local branch: {e}", s + 1))?;
                g.validate().map_err(|e| config_err!("stage {} global branch: {e}", s + 1))?;
            } else {
                for kind in self.series_kinds(s) {
                    self.block_attn(s, kind)
                        .validate()
                        .map_err(|e| config_err!("stage {}: {e}", s + 1))?;
                }
            }
        }
        Ok(())
    }
}
