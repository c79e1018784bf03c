use rayon::prelude::*;

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

const ROWS_PER_TASK: usize = 256;

/// Normalizes over the last axis (population variance), then applies the
/// per-channel affine `gamma`, `beta`.
pub fn layer_norm<'t, T: Scalar>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let c = *x.shape().last().expect("non-empty shape");
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!(
            "layer_norm: affine shapes {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    let rows = x.value().numel() / c;
    let eps = T::from_f64_lossy(eps);
    let inv_c = T::one() / T::from_usize_lossy(c);
    let mut xhat = vec![T::zero(); rows * c];
    let mut rstd = vec![T::zero(); rows];
    xhat.par_chunks_mut(ROWS_PER_TASK * c)
        .zip(rstd.par_chunks_mut(ROWS_PER_TASK))
        .zip(x.value().data().par_chunks(ROWS_PER_TASK * c))
        .for_each(|((xh, rs), xs)| {
            for ((xh, r), xr) in xh.chunks_exact_mut(c).zip(rs).zip(xs.chunks_exact(c)) {
                let mu = xr.iter().copied().sum::<T>() * inv_c;
                let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_c;
                *r = (var + eps).sqrt().recip();
                for (o, &v) in xh.iter_mut().zip(xr) {
                    *o = (v - mu) * *r;
                }
            }
        });
    let (gv, bv) = (gamma.value_arc(), beta.value_arc());
    let mut y = xhat.clone();
    for row in y.chunks_exact_mut(c) {
        for ((o, &g), &b) in row.iter_mut().zip(gv.data()).zip(bv.data()) {
            *o = *o * g + b;
        }
    }
    let shape = x.shape().to_vec();
    let out = Tensor::new(&shape, y)?;
    Ok(x.tape().record(out, &[x, gamma, beta], move |g, needs| {
        let gd = g.data();
        let dx = if needs[0] {
            let mut dx = vec![T::zero(); rows * c];
            dx.par_chunks_mut(ROWS_PER_TASK * c)
                .enumerate()
                .for_each(|(task, dxc)| {
                    let r0 = task * ROWS_PER_TASK;
                    let mut dyg = vec![T::zero(); c];
                    for (ri, dxr) in dxc.chunks_exact_mut(c).enumerate() {
                        let r = r0 + ri;
                        let gr = &gd[r * c..(r + 1) * c];
                        let xr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for i in 0..c {
                            dyg[i] = gr[i] * gv.data()[i];
                            m1 += dyg[i];
                            m2 += dyg[i] * xr[i];
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        for i in 0..c {
                            dxr[i] = rstd[r] * (dyg[i] - m1 - xr[i] * m2);
                        }
                    }
                });
            Some(Tensor::new(&shape, dx)?)
        } else {
            None
        };
        let (dgamma, dbeta) = if needs[1] || needs[2] {
            let mut dg = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            for (gr, xr) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for i in 0..c {
                    dg[i] += gr[i] * xr[i];
                    db[i] += gr[i];
                }
            }
            (
                needs[1].then(|| Tensor::new(&[c], dg)).transpose()?,
                needs[2].then(|| Tensor::new(&[c], db)).transpose()?,
            )
        } else {
            (None, None)
        };
        Ok(vec![dx, dgamma, dbeta])
    }))
}

/// Running statistics of a batch-norm layer after a training step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T: Scalar> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Per-channel normalization of an NCHW map.
///
/// In training mode the batch statistics normalize and the returned stats are
/// the running estimates blended as `momentum·old + (1−momentum)·batch`
/// (unbiased batch variance). In eval mode `running` normalizes and nothing
/// is returned.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<'t, T: Scalar>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    running: (&Tensor<T>, &Tensor<T>),
    train: bool,
    momentum: f64,
    eps: f64,
) -> Result<(Var<'t, T>, Option<BatchNormStats<T>>)> {
    let xs = x.shape().to_vec();
    if xs.len() != 4 {
        return Err(shape_err!("batch_norm expects NCHW input, got {xs:?}"));
    }
    let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
    for t in [gamma.value(), beta.value(), running.0, running.1] {
        if t.shape() != [c] {
            return Err(shape_err!("batch_norm: per-channel tensor {:?} does not match {c}", t.shape()));
        }
    }
    let n = b * hw;
    let xd = x.value().data();
    let eps_t = T::from_f64_lossy(eps);
    let (mean, var, stats) = if train {
        let nt = T::from_usize_lossy(n);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let plane = |bi: usize| &xd[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
            let mu = (0..b).map(|bi| plane(bi).iter().copied().sum::<T>()).sum::<T>() / nt;
            let ss = (0..b)
                .map(|bi| plane(bi).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>())
                .sum::<T>();
            mean[ch] = mu;
            var[ch] = ss / nt;
        }
        let m = T::from_f64_lossy(momentum);
        let unbias = if n > 1 { T::from_usize_lossy(n) / T::from_usize_lossy(n - 1) } else { T::one() };
        let new_mean = running.0.data().iter().zip(&mean).map(|(&o, &bm)| m * o + (T::one() - m) * bm).collect();
        let new_var = running
            .1
            .data()
            .iter()
            .zip(&var)
            .map(|(&o, &bv)| m * o + (T::one() - m) * bv * unbias)
            .collect();
        let stats = BatchNormStats {
            mean: Tensor::new(&[c], new_mean)?,
            var: Tensor::new(&[c], new_var)?,
        };
        (mean, var, Some(stats))
    } else {
        (running.0.data().to_vec(), running.1.data().to_vec(), None)
    };
    let rstd: Vec<T> = var.iter().map(|&v| (v + eps_t).sqrt().recip()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    for (i, (o, &v)) in xhat.iter_mut().zip(xd).enumerate() {
        let ch = (i / hw) % c;
        *o = (v - mean[ch]) * rstd[ch];
    }
    let (gv, bv) = (gamma.value_arc(), beta.value_arc());
    let y: Vec<T> = xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / hw) % c;
            v * gv.data()[ch] + bv.data()[ch]
        })
        .collect();
    let out = Tensor::new(&xs, y)?;
    let var_out = x.tape().record(out, &[x, gamma, beta], move |g, needs| {
        let gd = g.data();
        let mut dg = vec![T::zero(); c];
        let mut db = vec![T::zero(); c];
        for (i, (&gi, &xh)) in gd.iter().zip(&xhat).enumerate() {
            let ch = (i / hw) % c;
            dg[ch] += gi * xh;
            db[ch] += gi;
        }
        let dx = if needs[0] {
            let nt = T::from_usize_lossy(n);
            let dx: Vec<T> = gd
                .iter()
                .zip(&xhat)
                .enumerate()
                .map(|(i, (&gi, &xh))| {
                    let ch = (i / hw) % c;
                    let scale = gv.data()[ch] * rstd[ch];
                    if train {
                        scale * (gi - db[ch] / nt - xh * dg[ch] / nt)
                    } else {
                        scale * gi
                    }
                })
                .collect();
            Some(Tensor::new(&xs, dx)?)
        } else {
            None
        };
        Ok(vec![
            dx,
            needs[1].then(|| Tensor::new(&[c], dg)).transpose()?,
            needs[2].then(|| Tensor::new(&[c], db)).transpose()?,
        ])
    });
    Ok((var_out, stats))
}
