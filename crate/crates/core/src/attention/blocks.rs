use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::{config_err, Result};
use crate::nn::{Builder, DwConv, Init, LayerNorm, Linear};
use crate::ops;
use crate::tensor::Scalar;

use super::{Attention, AttnConfig, PeKind};

/// Two-layer perceptron `C -> ratio·C -> C` with GELU.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Ffn {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize, ratio: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), dim, ratio * dim, true)?,
            fc2: Linear::new(b, &format!("{name}.fc2"), ratio * dim, dim, true)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let h = ops::gelu(&self.fc1.forward(ctx, x)?);
        self.fc2.forward(ctx, &h)
    }
}

pub const FFN_RATIO: usize = 4;

fn cpe<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize, pe: PeKind) -> Result<Option<DwConv>> {
    if pe == PeKind::Cpe {
        Ok(Some(DwConv::same(b, &format!("{name}.cpe"), dim, 3, Init::Zeros)?))
    } else {
        Ok(None)
    }
}

fn apply_cpe<'t, T: Scalar>(ctx: &Ctx<'t, '_, T>, cpe: &Option<DwConv>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    match cpe {
        Some(conv) => ops::add(x, &conv.forward(ctx, x)?),
        None => Ok(x.clone()),
    }
}

/// Pre-norm transformer block: `y = x + Attn(LN(x))`, `z = y + FFN(LN(y))`,
/// with an optional conditional positional conv applied to `x` first.
#[derive(Clone, Debug)]
pub struct MixBlock {
    pub cpe: Option<DwConv>,
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

impl MixBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cfg: &AttnConfig, pe: PeKind) -> Result<Self> {
        let c = cfg.dim;
        Ok(Self {
            cpe: cpe(b, name, c, pe)?,
            norm1: LayerNorm::new(b, &format!("{name}.norm1"), c)?,
            attn: Attention::new(b, &format!("{name}.attn"), cfg)?,
            norm2: LayerNorm::new(b, &format!("{name}.norm2"), c)?,
            ffn: Ffn::new(b, &format!("{name}.ffn"), c, FFN_RATIO)?,
        })
    }

    /// `x` is `[B, H, W, C]`.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let x = apply_cpe(ctx, &self.cpe, x)?;
        let y = ops::add(&x, &self.attn.forward(ctx, &self.norm1.forward(ctx, &x)?)?)?;
        ops::add(&y, &self.ffn.forward(ctx, &self.norm2.forward(ctx, &y)?)?)
    }
}

/// Block whose attention sub-layer runs a local mixer on the first half of
/// the channels and a global mixer on the second half, concatenating the
/// results; one FFN follows.
#[derive(Clone, Debug)]
pub struct ParallelBlock {
    pub cpe: Option<DwConv>,
    pub norm1: LayerNorm,
    pub local: Attention,
    pub global: Attention,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
    pub dim: usize,
}

impl ParallelBlock {
    /// `local` and `global` describe the branches at their half widths.
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        dim: usize,
        local: &AttnConfig,
        global: &AttnConfig,
        pe: PeKind,
    ) -> Result<Self> {
        if !dim.is_multiple_of(2) || local.dim != dim / 2 || global.dim != dim / 2 {
            return Err(config_err!(
                "parallel block needs an even width split in halves, got {dim} -> {} + {}",
                local.dim,
                global.dim
            ));
        }
        Ok(Self {
            cpe: cpe(b, name, dim, pe)?,
            norm1: LayerNorm::new(b, &format!("{name}.norm1"), dim)?,
            local: Attention::new(b, &format!("{name}.local"), local)?,
            global: Attention::new(b, &format!("{name}.global"), global)?,
            norm2: LayerNorm::new(b, &format!("{name}.norm2"), dim)?,
            ffn: Ffn::new(b, &format!("{name}.ffn"), dim, FFN_RATIO)?,
            dim,
        })
    }

    /// The concatenated branch outputs, before the residual.
    pub fn mix<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (l, g) = self.branches(ctx, &self.norm1.forward(ctx, x)?)?;
        ops::concat(&[&l, &g], 3)
    }

    /// Local and global branch outputs for an already normalized input:
    /// the local branch sees channels `[0, C/2)`, the global `[C/2, C)`.
    pub fn branches<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, n: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let half = self.dim / 2;
        let l = self.local.forward(ctx, &ops::narrow(n, 3, 0, half)?)?;
        let g = self.global.forward(ctx, &ops::narrow(n, 3, half, half)?)?;
        Ok((l, g))
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let x = apply_cpe(ctx, &self.cpe, x)?;
        let y = ops::add(&x, &self.mix(ctx, &x)?)?;
        ops::add(&y, &self.ffn.forward(ctx, &self.norm2.forward(ctx, &y)?)?)
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Mix(MixBlock),
    Parallel(ParallelBlock),
}

impl Block {
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Block::Mix(m) => m.forward(ctx, x),
            Block::Parallel(p) => p.forward(ctx, x),
        }
    }
}
