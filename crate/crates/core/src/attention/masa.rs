use std::sync::Arc;

use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::Result;
use crate::nn::{Builder, DwConv, Init, Linear};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

use super::{dims4, record_heads, split_qkv, AttnConfig};

/// `D[i, j] = gamma^|i − j|` for an `l x l` grid.
pub fn decay_matrix_1d<T: Scalar>(l: usize, gamma: f64) -> Tensor<T> {
    let data = (0..l * l)
        .map(|k| T::from_f64_lossy(gamma.powi((k / l).abs_diff(k % l) as i32)))
        .collect();
    Tensor::new(&[l, l], data).expect("l >= 1")
}

/// Per-head decay rates `1 − 2^−(4+h)`, clamped to `[0.5, 0.999]`.
pub fn default_gammas(heads: usize) -> Vec<f64> {
    (0..heads)
        .map(|h| (1.0 - 2f64.powi(-(4 + h as i32))).clamp(0.5, 0.999))
        .collect()
}

/// Decomposed Manhattan self-attention: softmax attention along each row,
/// scaled elementwise by a distance decay, then the same along each column
/// of the row-attended result. A depthwise conv on V adds local context.
#[derive(Clone, Debug)]
pub struct Masa {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    pub gammas: Vec<f64>,
    pub qkv: Linear,
    pub proj: Linear,
    pub lepe: DwConv,
}

/// `[heads, reps, l, l]` stack of per-head decay matrices, repeated `reps` times.
fn decay_stack<T: Scalar>(gammas: &[f64], reps: usize, l: usize) -> Arc<Tensor<T>> {
    let mut data = Vec::with_capacity(gammas.len() * reps * l * l);
    for &g in gammas {
        let d = decay_matrix_1d::<T>(l, g);
        for _ in 0..reps {
            data.extend_from_slice(d.data());
        }
    }
    Arc::new(Tensor::new(&[gammas.len(), reps, l, l], data).expect("non-empty"))
}

impl Masa {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cfg: &AttnConfig) -> Result<Self> {
        let c = cfg.dim;
        Ok(Self {
            name: name.to_string(),
            dim: c,
            heads: cfg.heads,
            gammas: cfg.gammas.clone(),
            qkv: Linear::new(b, &format!("{name}.qkv"), c, 3 * c, true)?,
            proj: Linear::new(b, &format!("{name}.proj"), c, c, true)?,
            lepe: DwConv::same(b, &format!("{name}.lepe"), c, 3, Init::Zeros)?,
        })
    }

    /// Decayed attention output before the V conv and projection, and V.
    pub fn attend_axial<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let c = self.dim;
        let nh = self.heads;
        let d = c / nh;
        let (b, h, w) = dims4(x.shape(), c)?;
        let qkv = self.qkv.forward(ctx, x)?;
        let [q, k, v] = split_qkv(&qkv, c)?;
        // [B, H, W, C] -> [B, heads, H, W, d]
        let rows = |t: &Var<'t, T>| ops::permute(&ops::reshape(t, &[b, h, w, nh, d])?, &[0, 3, 1, 2, 4]);
        let (qr, kr, vr) = (rows(&q)?, rows(&k)?, rows(&v)?);
        let scale = T::from_f64_lossy(1.0 / (d as f64).sqrt());

        let decayed = |q: &Var<'t, T>, k: &Var<'t, T>, reps: usize, l: usize| -> Result<Var<'t, T>> {
            let p = ops::softmax_lastdim(&ops::scale(&ops::bmm(q, k, false, true)?, scale));
            ops::mul_suffix_const(&p, decay_stack(&self.gammas, reps, l))
        };
        let aw = decayed(&qr, &kr, h, w)?; // [B, heads, H, W, W]
        let ow = ops::bmm(&aw, &vr, false, false)?;

        // Columns: [B, heads, W, H, d]
        let cols = |t: &Var<'t, T>| ops::permute(t, &[0, 1, 3, 2, 4]);
        let ah = decayed(&cols(&qr)?, &cols(&kr)?, w, h)?; // [B, heads, W, H, H]
        let o = ops::bmm(&ah, &cols(&ow)?, false, false)?;
        if ctx.capturing_attention() {
            record_heads(ctx, &self.name, (h, w), composite_received(&aw, &ah, nh, h, w));
        }
        let o = ops::reshape(&ops::permute(&o, &[0, 3, 2, 1, 4])?, &[b, h, w, c])?;
        Ok((o, v))
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (o, v) = self.attend_axial(ctx, x)?;
        let o = ops::add(&o, &self.lepe.forward(ctx, &v)?)?;
        self.proj.forward(ctx, &o)
    }
}

/// Mass each key token receives under the composed column∘row attention,
/// batch item 0. The weight from query `(y, x)` to key `(y', x')` is
/// `A_H[x](y, y') · A_W[y'](x, x')`.
fn composite_received<T: Scalar>(aw: &Var<'_, T>, ah: &Var<'_, T>, heads: usize, h: usize, w: usize) -> Vec<Vec<f64>> {
    let (aw, ah) = (aw.value().data(), ah.value().data());
    (0..heads)
        .map(|hd| {
            // col_h[x][y'] = sum_y A_H[x](y, y')
            let mut col_h = vec![0.0; w * h];
            for x in 0..w {
                let base = (hd * w + x) * h * h;
                for y in 0..h {
                    for yp in 0..h {
                        col_h[x * h + yp] += ah[base + y * h + yp].to_f64_lossy();
                    }
                }
            }
            let mut map = vec![0.0; h * w];
            for yp in 0..h {
                let base = (hd * h + yp) * w * w;
                for x in 0..w {
                    let s = col_h[x * h + yp];
                    for xp in 0..w {
                        map[yp * w + xp] += s * aw[base + x * w + xp].to_f64_lossy();
                    }
                }
            }
            map
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_examples() {
        assert_eq!(decay_matrix_1d::<f64>(1, 0.3).data(), &[1.0]);
        assert_eq!(decay_matrix_1d::<f64>(2, 0.5).data(), &[1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn gamma_schedule() {
        let g = default_gammas(8);
        assert_eq!(g[0], 0.9375);
        assert_eq!(g[1], 0.96875);
        assert_eq!(g[7], 0.999);
        assert!(g.windows(2).all(|p| p[0] <= p[1]));
    }
}
