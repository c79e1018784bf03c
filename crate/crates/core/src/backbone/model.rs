//! The four-stage backbone and its CTC classifier.

use crate::attention::{Block, MixBlock, ParallelBlock, PeKind};
use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::{shape_err, Error, Result};
use crate::nn::{BatchNorm2d, Builder, Conv2d, Init, LayerNorm, Linear};
use crate::ops::{self, Conv2dSpec};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Scalar;

use super::config::{VariantConfig, APE_GRID};

/// Two stride-2 3×3 convolutions (`3 -> C0/2 -> C0`), each followed by batch
/// norm and GELU. NCHW in and out.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, c0: usize) -> Result<Self> {
        let spec = Conv2dSpec::new((2, 2), (1, 1), 1);
        let mid = c0 / 2;
        Ok(Self {
            conv1: Conv2d::new(b, &format!("{name}.conv1"), 3, mid, (3, 3), spec, true, Init::KaimingNormal)?,
            bn1: BatchNorm2d::new(b, &format!("{name}.bn1"), mid)?,
            conv2: Conv2d::new(b, &format!("{name}.conv2"), mid, c0, (3, 3), spec, true, Init::KaimingNormal)?,
            bn2: BatchNorm2d::new(b, &format!("{name}.bn2"), c0)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, img: &Var<'t, T>) -> Result<Var<'t, T>> {
        let s = img.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(shape_err!("expected an image batch [B, 3, H, W], got {s:?}"));
        }
        if !s[2].is_multiple_of(4) || !s[3].is_multiple_of(4) {
            return Err(shape_err!("image height and width must be multiples of 4, got {}x{}", s[2], s[3]));
        }
        let x = ops::gelu(&self.bn1.forward(ctx, &self.conv1.forward(ctx, img)?)?);
        Ok(ops::gelu(&self.bn2.forward(ctx, &self.conv2.forward(ctx, &x)?)?))
    }
}

/// Halves the height with a 3×3 conv of stride (2, 1), then layer norm.
/// Channels-last in and out.
#[derive(Clone, Debug)]
pub struct HdrConv {
    pub conv: Conv2d,
    pub norm: LayerNorm,
}

impl HdrConv {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let spec = Conv2dSpec::new((2, 1), (1, 1), 1);
        Ok(Self {
            conv: Conv2d::new(b, &format!("{name}.conv"), cin, cout, (3, 3), spec, true, Init::KaimingNormal)?,
            norm: LayerNorm::new(b, &format!("{name}.norm"), cout)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        if !x.shape()[1].is_multiple_of(2) {
            return Err(shape_err!("height reduction needs an even height, got {}", x.shape()[1]));
        }
        let nchw = ops::permute(x, &[0, 3, 1, 2])?;
        let y = self.conv.forward(ctx, &nchw)?;
        self.norm.forward(ctx, &ops::permute(&y, &[0, 2, 3, 1])?)
    }
}

/// Averages away the height, then a per-column projection, hardswish and
/// dropout. Channels-last in and out.
#[derive(Clone, Debug)]
pub struct HdrPool {
    pub fc: Linear,
    pub dropout: f64,
}

impl HdrPool {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, dropout: f64) -> Result<Self> {
        Ok(Self {
            fc: Linear::new(b, &format!("{name}.fc"), cin, cout, true)?,
            dropout,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let pooled = ops::mean_axis(x, 1)?;
        let y = ops::hardswish(&self.fc.forward(ctx, &pooled)?);
        let mut rng = ctx.rng();
        ops::dropout(&y, self.dropout, ctx.train(), &mut *rng)
    }
}

/// A built model: layer structure plus the ids of its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: VariantConfig,
    pub patch_embed: PatchEmbed,
    pub ape: Option<ParamId>,
    pub stages: [Vec<Block>; 4],
    pub hdr1: HdrConv,
    pub hdr2: HdrConv,
    pub hdr_pool: HdrPool,
    pub head: Linear,
}

/// Name prefix of the CTC classifier's parameters.
pub const HEAD_PREFIX: &str = "head.";

fn check_finite<T: Scalar>(v: &Var<'_, T>, layer: &str) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer.to_string() })
    }
}

impl Model {
    /// Builds the layer structure, registering freshly initialized
    /// parameters in `store`.
    pub fn build<T: Scalar>(cfg: &VariantConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let b = &mut Builder::new(store, seed);
        let c = cfg.channels;
        let patch_embed = PatchEmbed::new(b, "patch_embed", c[0])?;
        let ape = if cfg.pe_kind == PeKind::Ape {
            Some(b.weight("ape", &[c[0], APE_GRID.0, APE_GRID.1], Init::TruncNormal(0.02), 1)?)
        } else {
            None
        };
        let mut stages: [Vec<Block>; 4] = Default::default();
        let mut hdr = Vec::new();
        for s in 0..4 {
            for i in 0..cfg.depths[s] {
                let name = format!("stage{}.block{i}", s + 1);
                let block = if cfg.is_parallel_stage(s) {
                    let (l, g) = cfg.parallel_attn(s);
                    Block::Parallel(ParallelBlock::new(b, &name, c[s], &l, &g, cfg.pe_kind)?)
                } else {
                    let kind = cfg.series_kinds(s)[i];
                    Block::Mix(MixBlock::new(b, &name, &cfg.block_attn(s, kind), cfg.pe_kind)?)
                };
                stages[s].push(block);
            }
            if s < 2 {
                hdr.push(HdrConv::new(b, &format!("hdr{}", s + 1), c[s], c[s + 1])?);
            }
        }
        let hdr_pool = HdrPool::new(b, "hdr_pool", c[2], c[3], cfg.dropout)?;
        let head = Linear::new(b, "head.fc", c[3], cfg.num_classes, true)?;
        let hdr2 = hdr.pop().expect("two reductions");
        let hdr1 = hdr.pop().expect("two reductions");
        Ok(Self {
            cfg: cfg.clone(),
            patch_embed,
            ape,
            stages,
            hdr1,
            hdr2,
            hdr_pool,
            head,
        })
    }

    fn run_stage<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, s: usize, mut x: Var<'t, T>) -> Result<Var<'t, T>> {
        for (i, block) in self.stages[s].iter().enumerate() {
            x = block.forward(ctx, &x)?;
            check_finite(&x, &format!("stage{}.block{i}", s + 1))?;
        }
        Ok(x)
    }

    /// Patch embedding plus optional absolute positions; `[B, H/4, W/4, C0]`.
    pub fn embed<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, img: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mut x = self.patch_embed.forward(ctx, img)?;
        if let Some(ape) = self.ape {
            let (h, w) = (x.shape()[2], x.shape()[3]);
            let mut table = ctx.p(ape);
            if (h, w) != APE_GRID {
                ctx.warn(format!(
                    "absolute position table is {}x{}, resized to {h}x{w}",
                    APE_GRID.0, APE_GRID.1
                ));
                table = ops::resize_bilinear_chw(&table, h, w)?;
            }
            x = ops::add_suffix(&x, &table)?;
        }
        check_finite(&x, "patch_embed")?;
        ops::permute(&x, &[0, 2, 3, 1])
    }

    /// Backbone output as channels-last `[B, 1, W/4, C3]`.
    pub fn forward_tokens<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, img: &Var<'t, T>) -> Result<Var<'t, T>> {
        let h = img.shape().get(2).copied().unwrap_or(0);
        if h % 16 != 0 {
            return Err(shape_err!("image height must be a multiple of 16, got {h}"));
        }
        let x = self.embed(ctx, img)?;
        let x = self.run_stage(ctx, 0, x)?;
        let x = self.hdr1.forward(ctx, &x)?;
        check_finite(&x, "hdr1")?;
        let x = self.run_stage(ctx, 1, x)?;
        let x = self.hdr2.forward(ctx, &x)?;
        check_finite(&x, "hdr2")?;
        let x = self.run_stage(ctx, 2, x)?;
        let x = self.hdr_pool.forward(ctx, &x)?;
        check_finite(&x, "hdr_pool")?;
        self.run_stage(ctx, 3, x)
    }

    /// Backbone features `[B, C3, 1, W/4]`.
    pub fn features<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, img: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::permute(&self.forward_tokens(ctx, img)?, &[0, 3, 1, 2])
    }

    /// Per-position class scores `[B, W/4, N]`.
    pub fn logits<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, img: &Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.forward_tokens(ctx, img)?;
        let s = x.shape().to_vec();
        let x = ops::reshape(&x, &[s[0], s[2], s[3]])?;
        let y = self.head.forward(ctx, &x)?;
        check_finite(&y, "head")?;
        Ok(y)
    }
}

/// Builds a model with a fresh parameter store.
pub fn build_model<T: Scalar>(cfg: &VariantConfig, seed: u64) -> Result<(Model, ParamStore<T>)> {
    let mut store = ParamStore::new();
    let model = Model::build(cfg, &mut store, seed)?;
    Ok((model, store))
}

/// Which parameters [`count_params`] includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountScope {
    /// Everything except the CTC classifier.
    Backbone,
    Full,
}

/// Number of trainable scalars; running statistics are not counted.
pub fn count_params<T: Scalar>(store: &ParamStore<T>, scope: CountScope) -> usize {
    match scope {
        CountScope::Backbone => store.count_weights(|n| !n.starts_with(HEAD_PREFIX)),
        CountScope::Full => store.count_weights(|_| true),
    }
}
