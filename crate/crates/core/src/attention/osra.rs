use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::Result;
use crate::nn::{clamped_geometry, Builder, DwConv, Init, LayerNorm, Linear};
use crate::ops;
use crate::tensor::Scalar;

use super::{attend, dims4, merge_heads, received_mass, record_heads, split_heads, AttnConfig};

/// Token grid of the reduced key/value map for an `h x w` input.
pub fn osra_reduced_grid(h: usize, w: usize, sr: usize) -> (usize, usize) {
    let k = 2 * sr - 1;
    let (stride, pad) = clamped_geometry(&[0, 0, k, k], &[0, h, w, 0], (sr, sr), (sr - 1, sr - 1));
    (
        (h + 2 * pad.0 - k) / stride.0 + 1,
        (w + 2 * pad.1 - k) / stride.1 + 1,
    )
}

/// Attention whose keys and values come from a spatially reduced map: an
/// overlapping depthwise conv (kernel `2·sr−1`, stride `sr`) followed by
/// layer norm.
#[derive(Clone, Debug)]
pub struct Osra {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    pub q: Linear,
    pub kv: Linear,
    pub proj: Linear,
    pub reduce: DwConv,
    pub norm: LayerNorm,
    pub lepe: Option<DwConv>,
}

impl Osra {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cfg: &AttnConfig) -> Result<Self> {
        let c = cfg.dim;
        let sr = cfg.reduction_ratio;
        let k = 2 * sr - 1;
        Ok(Self {
            name: name.to_string(),
            dim: c,
            heads: cfg.heads,
            q: Linear::new(b, &format!("{name}.q"), c, c, true)?,
            kv: Linear::new(b, &format!("{name}.kv"), c, 2 * c, true)?,
            proj: Linear::new(b, &format!("{name}.proj"), c, c, true)?,
            reduce: DwConv::new(b, &format!("{name}.sr"), c, (k, k), (sr, sr), (sr - 1, sr - 1), Init::KaimingNormal)?,
            norm: LayerNorm::new(b, &format!("{name}.sr_norm"), c)?,
            lepe: if cfg.lepe {
                Some(DwConv::same(b, &format!("{name}.lepe"), c, 3, Init::Zeros)?)
            } else {
                None
            },
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let c = self.dim;
        let (b, h, w) = dims4(x.shape(), c)?;
        let q = self.q.forward(ctx, x)?;
        let reduced = self.norm.forward(ctx, &self.reduce.forward_clamped(ctx, x)?)?;
        let (rh, rw) = (reduced.shape()[1], reduced.shape()[2]);
        let kv = self.kv.forward(ctx, &reduced)?;
        let k = ops::narrow(&kv, 3, 0, c)?;
        let mut v = ops::narrow(&kv, 3, c, c)?;
        if let Some(lepe) = &self.lepe {
            v = ops::add(&v, &lepe.forward(ctx, &v)?)?;
        }
        let qh = split_heads(&ops::reshape(&q, &[b, h * w, c])?, self.heads)?;
        let kh = split_heads(&ops::reshape(&k, &[b, rh * rw, c])?, self.heads)?;
        let vh = split_heads(&ops::reshape(&v, &[b, rh * rw, c])?, self.heads)?;
        let (o, probs) = attend(&qh, &kh, &vh)?;
        if ctx.capturing_attention() {
            let maps = received_mass(&probs)
                .into_iter()
                .map(|m| upsample_nearest(&m, (rh, rw), (h, w)))
                .collect();
            record_heads(ctx, &self.name, (h, w), maps);
        }
        let o = ops::reshape(&merge_heads(&o)?, &[b, h, w, c])?;
        self.proj.forward(ctx, &o)
    }
}

fn upsample_nearest(src: &[f64], from: (usize, usize), to: (usize, usize)) -> Vec<f64> {
    let mut out = Vec::with_capacity(to.0 * to.1);
    for y in 0..to.0 {
        let sy = y * from.0 / to.0;
        for x in 0..to.1 {
            out.push(src[sy * from.1 + x * from.1 / to.1]);
        }
    }
    out
}
