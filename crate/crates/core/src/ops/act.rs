use rand::Rng;
use rayon::prelude::*;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Hardswish,
}

impl Activation {
    pub fn apply<'t, T: Scalar>(self, x: &Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Hardswish => hardswish(x),
        }
    }
}

const ELEMS_PER_TASK: usize = 1 << 14;

fn elementwise<'t, T: Scalar>(
    x: &Var<'t, T>,
    f: impl Fn(T) -> T + Sync,
    df: impl Fn(T) -> T + Sync + Send + 'static,
) -> Var<'t, T> {
    let mut y = x.value().data().to_vec();
    y.par_chunks_mut(ELEMS_PER_TASK)
        .for_each(|c| c.iter_mut().for_each(|v| *v = f(*v)));
    let out = Tensor::new(x.shape(), y).expect("same shape");
    let xv = x.value_arc();
    x.tape().record(out, &[x], move |g, _| {
        let mut d = g.data().to_vec();
        d.par_chunks_mut(ELEMS_PER_TASK)
            .zip(xv.data().par_chunks(ELEMS_PER_TASK))
            .for_each(|(dc, xc)| {
                for (d, &x) in dc.iter_mut().zip(xc) {
                    *d *= df(x);
                }
            });
        Ok(vec![Some(Tensor::new(g.shape(), d)?)])
    })
}

const GELU_C: f64 = 0.044_715;

/// GELU with the tanh approximation.
pub fn gelu<'t, T: Scalar>(x: &Var<'t, T>) -> Var<'t, T> {
    let k = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let c = T::from_f64_lossy(GELU_C);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    elementwise(
        x,
        move |x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()),
        move |x| {
            let t = (k * (x + c * x * x * x)).tanh();
            half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * c * x * x)
        },
    )
}

/// `x · relu6(x + 3) / 6`.
pub fn hardswish<'t, T: Scalar>(x: &Var<'t, T>) -> Var<'t, T> {
    let three = T::from_f64_lossy(3.0);
    let six = T::from_f64_lossy(6.0);
    let two = T::from_f64_lossy(2.0);
    elementwise(
        x,
        move |x| x * (x + three).max(T::zero()).min(six) / six,
        move |x| {
            if x <= -three {
                T::zero()
            } else if x >= three {
                T::one()
            } else {
                (two * x + three) / six
            }
        },
    )
}

fn rows_of<T: Scalar>(x: &Var<'_, T>) -> (usize, usize) {
    let n = *x.shape().last().expect("non-empty shape");
    (x.value().numel() / n, n)
}

/// Softmax over the last axis, computed with max subtraction.
pub fn softmax_lastdim<'t, T: Scalar>(x: &Var<'t, T>) -> Var<'t, T> {
    let (_, n) = rows_of(x);
    let mut y = x.value().data().to_vec();
    let rows_per_task = (ELEMS_PER_TASK / n).max(1);
    y.par_chunks_mut(rows_per_task * n).for_each(|c| {
        for row in c.chunks_exact_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            let inv = s.recip();
            row.iter_mut().for_each(|v| *v *= inv);
        }
    });
    let out = Tensor::new(x.shape(), y).expect("same shape");
    let yv = std::sync::Arc::new(out.clone());
    x.tape().record(out, &[x], move |g, _| {
        let mut d = g.data().to_vec();
        d.par_chunks_mut(rows_per_task * n)
            .zip(yv.data().par_chunks(rows_per_task * n))
            .for_each(|(dc, yc)| {
                for (dr, yr) in dc.chunks_exact_mut(n).zip(yc.chunks_exact(n)) {
                    let dot: T = dr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for (d, &y) in dr.iter_mut().zip(yr) {
                        *d = y * (*d - dot);
                    }
                }
            });
        Ok(vec![Some(Tensor::new(g.shape(), d)?)])
    })
}

/// Log-softmax over the last axis.
pub fn log_softmax_lastdim<'t, T: Scalar>(x: &Var<'t, T>) -> Var<'t, T> {
    let (_, n) = rows_of(x);
    let mut y = x.value().data().to_vec();
    for row in y.chunks_exact_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    let out = Tensor::new(x.shape(), y).expect("same shape");
    let yv = std::sync::Arc::new(out.clone());
    x.tape().record(out, &[x], move |g, _| {
        let mut d = g.data().to_vec();
        for (dr, yr) in d.chunks_exact_mut(n).zip(yv.data().chunks_exact(n)) {
            let s: T = dr.iter().copied().sum();
            for (d, &y) in dr.iter_mut().zip(yr) {
                *d -= y.exp() * s;
            }
        }
        Ok(vec![Some(Tensor::new(g.shape(), d)?)])
    })
}

/// Inverted dropout: in training mode zeroes each element with probability
/// `p` and scales survivors by `1/(1−p)`; identity otherwise.
pub fn dropout<'t, T: Scalar, R: Rng + ?Sized>(x: &Var<'t, T>, p: f64, train: bool, rng: &mut R) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if !train || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.value().numel())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let y: Vec<T> = x.value().data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let out = Tensor::new(x.shape(), y)?;
    Ok(x.tape().record(out, &[x], move |g, _| {
        let d = g.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(vec![Some(Tensor::new(g.shape(), d)?)])
    }))
}
