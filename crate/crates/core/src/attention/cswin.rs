use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::Result;
use crate::kernels::invert_perm;
use crate::nn::{Builder, DwConv, Init, Linear};
use crate::ops;
use crate::tensor::Scalar;

use super::{attend, dims4, record_heads, split_qkv, AttnConfig};

/// `(horizontal heads, vertical heads, head dim)` for `heads` heads over
/// `dim` channels. A single head is split into two half-width heads.
pub fn cswin_head_split(dim: usize, heads: usize) -> (usize, usize, usize) {
    if heads == 1 {
        (1, 1, dim / 2)
    } else {
        (heads / 2, heads - heads / 2, dim / heads)
    }
}

/// Stripe attention: half the heads attend within horizontal stripes of
/// `sw` full-width rows, the other half within vertical stripes of `sw`
/// full-height columns. A depthwise conv on V is added to the result.
#[derive(Clone, Debug)]
pub struct CsWin {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    pub split_window: usize,
    pub qkv: Linear,
    pub proj: Linear,
    pub lepe: DwConv,
}

#[derive(Clone, Copy)]
struct Stripes {
    horizontal: bool,
    b: usize,
    h: usize,
    w: usize,
    sw: usize,
    heads: usize,
    d: usize,
}

impl Stripes {
    /// Axes of the 6-D view and the permutation that groups tokens of one
    /// stripe and one head together.
    fn layout(&self) -> ([usize; 6], [usize; 6]) {
        if self.horizontal {
            ([self.b, self.h / self.sw, self.sw, self.w, self.heads, self.d], [0, 1, 4, 2, 3, 5])
        } else {
            ([self.b, self.h, self.w / self.sw, self.sw, self.heads, self.d], [0, 2, 4, 1, 3, 5])
        }
    }

    fn groups(&self) -> usize {
        if self.horizontal {
            self.h / self.sw
        } else {
            self.w / self.sw
        }
    }

    fn tokens(&self) -> usize {
        if self.horizontal {
            self.sw * self.w
        } else {
            self.h * self.sw
        }
    }

    /// `[B, H, W, heads·d] -> [B·groups·heads, tokens, d]`.
    fn split<'t, T: Scalar>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (view, perm) = self.layout();
        let x = ops::permute(&ops::reshape(x, &view)?, &perm)?;
        ops::reshape(&x, &[self.b * self.groups() * self.heads, self.tokens(), self.d])
    }

    fn merge<'t, T: Scalar>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (view, perm) = self.layout();
        let permuted: Vec<usize> = perm.iter().map(|&p| view[p]).collect();
        let x = ops::permute(&ops::reshape(x, &permuted)?, &invert_perm(&perm))?;
        ops::reshape(&x, &[self.b, self.h, self.w, self.heads * self.d])
    }

    /// Attention mass each token receives, per head, for batch item 0.
    fn received<T: Scalar>(&self, probs: &Var<'_, T>) -> Vec<Vec<f64>> {
        let t = self.tokens();
        let g = self.groups();
        let p = probs.value().data();
        let mut maps = vec![vec![0.0; self.h * self.w]; self.heads];
        for grp in 0..g {
            for (head, map) in maps.iter_mut().enumerate() {
                let base = (grp * self.heads + head) * t * t;
                for j in 0..t {
                    let mass: f64 = (0..t).map(|i| p[base + i * t + j].to_f64_lossy()).sum();
                    let (y, x) = if self.horizontal {
                        (grp * self.sw + j / self.w, j % self.w)
                    } else {
                        (j / self.sw, grp * self.sw + j % self.sw)
                    };
                    map[y * self.w + x] = mass;
                }
            }
        }
        maps
    }
}

impl CsWin {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cfg: &AttnConfig) -> Result<Self> {
        let c = cfg.dim;
        Ok(Self {
            name: name.to_string(),
            dim: c,
            heads: cfg.heads,
            split_window: cfg.split_window,
            qkv: Linear::new(b, &format!("{name}.qkv"), c, 3 * c, true)?,
            proj: Linear::new(b, &format!("{name}.proj"), c, c, true)?,
            lepe: DwConv::same(b, &format!("{name}.lepe"), c, 3, Init::Zeros)?,
        })
    }

    /// Stripe width actually used along an axis of length `n`: the
    /// configured width if it divides `n`, else 1.
    pub fn effective_window(&self, n: usize) -> usize {
        if n.is_multiple_of(self.split_window) {
            self.split_window
        } else {
            1
        }
    }

    /// Attention output before the V conv and projection, `[B, H, W, C]`,
    /// with horizontal-stripe heads in the leading channels; also returns V.
    pub fn attend_stripes<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let c = self.dim;
        let (b, h, w) = dims4(x.shape(), c)?;
        let (nh, nv, d) = cswin_head_split(c, self.heads);
        let qkv = self.qkv.forward(ctx, x)?;
        let [q, k, v] = split_qkv(&qkv, c)?;
        let mut halves = Vec::with_capacity(2);
        let mut maps = Vec::new();
        for (horizontal, offset, heads) in [(true, 0, nh), (false, nh * d, nv)] {
            let s = Stripes {
                horizontal,
                b,
                h,
                w,
                sw: self.effective_window(if horizontal { h } else { w }),
                heads,
                d,
            };
            let part = |t: &Var<'t, T>| s.split(&ops::narrow(t, 3, offset, heads * d)?);
            let (o, probs) = attend(&part(&q)?, &part(&k)?, &part(&v)?)?;
            if ctx.capturing_attention() {
                maps.extend(s.received(&probs));
            }
            halves.push(s.merge(&o)?);
        }
        if ctx.capturing_attention() {
            record_heads(ctx, &self.name, (h, w), maps);
        }
        Ok((ops::concat(&[&halves[0], &halves[1]], 3)?, v))
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (o, v) = self.attend_stripes(ctx, x)?;
        let o = ops::add(&o, &self.lepe.forward(ctx, &v)?)?;
        self.proj.forward(ctx, &o)
    }
}
