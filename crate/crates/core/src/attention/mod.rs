//! Attention mixers, positional embeddings and the blocks built from them.
//!
//! All mixers take and return channels-last maps `[B, H, W, C]`.

mod blocks;
mod cswin;
mod masa;
mod mhsa;
mod osra;

pub use blocks::{Block, Ffn, MixBlock, ParallelBlock, FFN_RATIO};
pub use cswin::{cswin_head_split, CsWin};
pub use masa::{decay_matrix_1d, default_gammas, Masa};
pub use mhsa::Mhsa;
pub use osra::{osra_reduced_grid, Osra};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::ctx::{AttnRecord, Ctx};
use crate::error::{config_err, Error, Result};
use crate::nn::Builder;
use crate::ops;
use crate::tensor::Scalar;

/// The four attention mechanisms. `L*` are local, `G*` global.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttnKind {
    /// G1: full multi-head self-attention.
    Mhsa,
    /// G2: attention over keys/values from an overlapping strided reduction.
    Osra,
    /// L1: horizontal and vertical stripe attention.
    CsWin,
    /// L2: axial attention with Manhattan-distance decay.
    Masa,
}

impl AttnKind {
    pub fn is_local(self) -> bool {
        matches!(self, AttnKind::CsWin | AttnKind::Masa)
    }

    /// Grammar token: `L1`, `L2`, `G1` or `G2`.
    pub fn token(self) -> &'static str {
        match self {
            AttnKind::Mhsa => "G1",
            AttnKind::Osra => "G2",
            AttnKind::CsWin => "L1",
            AttnKind::Masa => "L2",
        }
    }

    pub fn from_token(t: &str) -> Option<Self> {
        Some(match t {
            "G1" => AttnKind::Mhsa,
            "G2" => AttnKind::Osra,
            "L1" => AttnKind::CsWin,
            "L2" => AttnKind::Masa,
            _ => return None,
        })
    }
}

/// Positional embedding scheme, one per model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeKind {
    None,
    /// Learned table added once after patch embedding.
    Ape,
    /// `x + dwconv3x3(x)` at each block entry.
    Cpe,
    /// Depthwise conv on attention values.
    #[default]
    Lepe,
}

impl fmt::Display for PeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeKind::None => "none",
            PeKind::Ape => "ape",
            PeKind::Cpe => "cpe",
            PeKind::Lepe => "lepe",
        })
    }
}

impl FromStr for PeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" => PeKind::None,
            "ape" => PeKind::Ape,
            "cpe" => PeKind::Cpe,
            "lepe" => PeKind::Lepe,
            _ => return Err(config_err!("unknown positional embedding '{s}'")),
        })
    }
}

/// Configuration of one attention mixer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnConfig {
    pub dim: usize,
    pub heads: usize,
    pub kind: AttnKind,
    /// Stripe width for CSWin.
    pub split_window: usize,
    /// Spatial reduction ratio for OSRA.
    pub reduction_ratio: usize,
    /// Per-head decay rates for MaSA.
    pub gammas: Vec<f64>,
    /// Adds a depthwise conv on V to MHSA and OSRA. CSWin and MaSA always
    /// carry theirs.
    pub lepe: bool,
}

impl AttnConfig {
    pub fn new(kind: AttnKind, dim: usize, heads: usize) -> Self {
        Self {
            dim,
            heads,
            kind,
            split_window: 1,
            reduction_ratio: 2,
            gammas: default_gammas(heads),
            lepe: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(config_err!("{} channels not divisible into {} heads", self.dim, self.heads));
        }
        if !(1..=2).contains(&self.split_window) {
            return Err(config_err!("split window must be 1 or 2, got {}", self.split_window));
        }
        if self.reduction_ratio == 0 {
            return Err(config_err!("reduction ratio must be at least 1"));
        }
        if self.kind == AttnKind::CsWin && self.heads == 1 && !self.dim.is_multiple_of(2) {
            return Err(config_err!("single-head stripe attention needs an even channel count"));
        }
        if self.kind == AttnKind::Masa {
            if self.gammas.len() != self.heads {
                return Err(config_err!("{} decay rates for {} heads", self.gammas.len(), self.heads));
            }
            if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
                return Err(config_err!("decay rate {g} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

/// A built attention mixer.
#[derive(Clone, Debug)]
pub enum Attention {
    Mhsa(Mhsa),
    Osra(Osra),
    CsWin(CsWin),
    Masa(Masa),
}

impl Attention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cfg: &AttnConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            AttnKind::Mhsa => Attention::Mhsa(Mhsa::new(b, name, cfg)?),
            AttnKind::Osra => Attention::Osra(Osra::new(b, name, cfg)?),
            AttnKind::CsWin => Attention::CsWin(CsWin::new(b, name, cfg)?),
            AttnKind::Masa => Attention::Masa(Masa::new(b, name, cfg)?),
        })
    }

    pub fn kind(&self) -> AttnKind {
        match self {
            Attention::Mhsa(_) => AttnKind::Mhsa,
            Attention::Osra(_) => AttnKind::Osra,
            Attention::CsWin(_) => AttnKind::CsWin,
            Attention::Masa(_) => AttnKind::Masa,
        }
    }

    /// `x` is `[B, H, W, C]`.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Attention::Mhsa(m) => m.forward(ctx, x),
            Attention::Osra(m) => m.forward(ctx, x),
            Attention::CsWin(m) => m.forward(ctx, x),
            Attention::Masa(m) => m.forward(ctx, x),
        }
    }
}

/// `[B, H, W, C]` dims, checking the channel count.
pub(crate) fn dims4(x: &[usize], c: usize) -> Result<(usize, usize, usize)> {
    if x.len() != 4 || x[3] != c {
        return Err(crate::error::shape_err!("attention expects [B, H, W, {c}], got {x:?}"));
    }
    Ok((x[0], x[1], x[2]))
}

/// Splits a fused `[B, H, W, 3C]` projection into q, k, v of `[B, H, W, C]`.
pub(crate) fn split_qkv<'t, T: Scalar>(qkv: &Var<'t, T>, c: usize) -> Result<[Var<'t, T>; 3]> {
    Ok([ops::narrow(qkv, 3, 0, c)?, ops::narrow(qkv, 3, c, c)?, ops::narrow(qkv, 3, 2 * c, c)?])
}

/// `[B, L, h·d] -> [B, h, L, d]`.
pub(crate) fn split_heads<'t, T: Scalar>(x: &Var<'t, T>, heads: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let (b, l, c) = (s[0], s[1], s[2]);
    let x = ops::reshape(x, &[b, l, heads, c / heads])?;
    ops::permute(&x, &[0, 2, 1, 3])
}

/// `[B, h, L, d] -> [B, L, h·d]`.
pub(crate) fn merge_heads<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape().to_vec();
    let x = ops::permute(x, &[0, 2, 1, 3])?;
    ops::reshape(&x, &[s[0], s[2], s[1] * s[3]])
}

/// Scaled dot-product attention over matching leading axes. Returns the
/// output and the attention probabilities.
pub(crate) fn attend<'t, T: Scalar>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let d = *q.shape().last().expect("non-empty shape");
    let scores = ops::scale(&ops::bmm(q, k, false, true)?, T::from_f64_lossy(1.0 / (d as f64).sqrt()));
    let probs = ops::softmax_lastdim(&scores);
    Ok((ops::bmm(&probs, v, false, false)?, probs))
}

/// Column sums of the first batch item's per-head attention `[B, h, Lq, Lk]`.
pub(crate) fn received_mass<T: Scalar>(probs: &Var<'_, T>) -> Vec<Vec<f64>> {
    let s = probs.shape();
    let (heads, lq, lk) = (s[1], s[2], s[3]);
    let d = probs.value().data();
    (0..heads)
        .map(|h| {
            let mut col = vec![0.0; lk];
            for i in 0..lq {
                let row = &d[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                for (c, v) in col.iter_mut().zip(row) {
                    *c += v.to_f64_lossy();
                }
            }
            col
        })
        .collect()
}

pub(crate) fn record_heads<T: Scalar>(ctx: &Ctx<'_, '_, T>, block: &str, grid: (usize, usize), maps: Vec<Vec<f64>>) {
    for (head, map) in maps.into_iter().enumerate() {
        ctx.record_attention(AttnRecord {
            block: block.to_string(),
            head,
            grid,
            map,
        });
    }
}
