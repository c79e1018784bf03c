use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::Result;
use crate::nn::{Builder, DwConv, Init, Linear};
use crate::ops;
use crate::tensor::Scalar;

use super::{attend, dims4, merge_heads, received_mass, record_heads, split_heads, split_qkv, AttnConfig};

/// Multi-head self-attention over every token of the map.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    pub qkv: Linear,
    pub proj: Linear,
    pub lepe: Option<DwConv>,
}

impl Mhsa {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cfg: &AttnConfig) -> Result<Self> {
        let c = cfg.dim;
        Ok(Self {
            name: name.to_string(),
            dim: c,
            heads: cfg.heads,
            qkv: Linear::new(b, &format!("{name}.qkv"), c, 3 * c, true)?,
            proj: Linear::new(b, &format!("{name}.proj"), c, c, true)?,
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
        let l = h * w;
        let qkv = self.qkv.forward(ctx, x)?;
        let [q, k, v] = split_qkv(&qkv, c)?;
        let heads = |t: &Var<'t, T>| split_heads(&ops::reshape(t, &[b, l, c])?, self.heads);
        let (o, probs) = attend(&heads(&q)?, &heads(&k)?, &heads(&v)?)?;
        if ctx.capturing_attention() {
            record_heads(ctx, &self.name, (h, w), received_mass(&probs));
        }
        let mut o = ops::reshape(&merge_heads(&o)?, &[b, h, w, c])?;
        if let Some(lepe) = &self.lepe {
            o = ops::add(&o, &lepe.forward(ctx, &v)?)?;
        }
        self.proj.forward(ctx, &o)
    }
}
