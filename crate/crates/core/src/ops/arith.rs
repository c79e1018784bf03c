use std::sync::Arc;

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

fn same_shape<T: Scalar>(op: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

pub fn add<'t, T: Scalar>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("add", a, b)?;
    let out = zip_map(a.value(), b.value(), |x, y| x + y);
    Ok(a.tape().record(out, &[a, b], |g, needs| {
        Ok(vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())])
    }))
}

pub fn sub<'t, T: Scalar>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("sub", a, b)?;
    let out = zip_map(a.value(), b.value(), |x, y| x - y);
    Ok(a.tape().record(out, &[a, b], |g, needs| {
        Ok(vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))])
    }))
}

/// Elementwise product.
pub fn mul<'t, T: Scalar>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("mul", a, b)?;
    let out = zip_map(a.value(), b.value(), |x, y| x * y);
    let (av, bv) = (a.value_arc(), b.value_arc());
    Ok(a.tape().record(out, &[a, b], move |g, needs| {
        Ok(vec![
            needs[0].then(|| zip_map(g, &bv, |g, b| g * b)),
            needs[1].then(|| zip_map(g, &av, |g, a| g * a)),
        ])
    }))
}

pub fn scale<'t, T: Scalar>(x: &Var<'t, T>, s: T) -> Var<'t, T> {
    let out = x.value().map(|v| v * s);
    x.tape().record(out, &[x], move |g, _| Ok(vec![Some(g.map(|v| v * s))]))
}

fn check_suffix(op: &str, x: &[usize], y: &[usize]) -> Result<()> {
    if y.len() > x.len() || x[x.len() - y.len()..] != *y {
        return Err(shape_err!("{op}: {y:?} is not a trailing sub-shape of {x:?}"));
    }
    Ok(())
}

/// `x + y` where `y`'s shape equals the trailing axes of `x`, broadcast over
/// the leading ones.
pub fn add_suffix<'t, T: Scalar>(x: &Var<'t, T>, y: &Var<'t, T>) -> Result<Var<'t, T>> {
    check_suffix("add_suffix", x.shape(), y.shape())?;
    let yv = y.value().data();
    let n = yv.len();
    let mut out = x.value().clone();
    for chunk in out.data_mut().chunks_exact_mut(n) {
        for (o, &b) in chunk.iter_mut().zip(yv) {
            *o += b;
        }
    }
    let y_shape = y.shape().to_vec();
    Ok(x.tape().record(out, &[x, y], move |g, needs| {
        let dy = if needs[1] {
            let mut acc = vec![T::zero(); n];
            for chunk in g.data().chunks_exact(n) {
                for (a, &v) in acc.iter_mut().zip(chunk) {
                    *a += v;
                }
            }
            Some(Tensor::new(&y_shape, acc)?)
        } else {
            None
        };
        Ok(vec![needs[0].then(|| g.clone()), dy])
    }))
}

/// `x ⊙ c` for a constant `c` whose shape equals the trailing axes of `x`.
pub fn mul_suffix_const<'t, T: Scalar>(x: &Var<'t, T>, c: Arc<Tensor<T>>) -> Result<Var<'t, T>> {
    check_suffix("mul_suffix_const", x.shape(), c.shape())?;
    let n = c.numel();
    let apply = move |src: &Tensor<T>, c: &Tensor<T>| {
        let mut out = src.clone();
        for chunk in out.data_mut().chunks_exact_mut(n) {
            for (o, &k) in chunk.iter_mut().zip(c.data()) {
                *o *= k;
            }
        }
        out
    };
    let out = apply(x.value(), &c);
    Ok(x.tape().record(out, &[x], move |g, _| Ok(vec![Some(apply(g, &c))])))
}

/// Sum of all elements, shape `[1]`.
pub fn sum<'t, T: Scalar>(x: &Var<'t, T>) -> Var<'t, T> {
    let shape = x.shape().to_vec();
    let out = Tensor::scalar(x.value().sum());
    x.tape().record(out, &[x], move |g, _| Ok(vec![Some(Tensor::full(&shape, g.item()))]))
}

/// Mean of all elements, shape `[1]`.
pub fn mean<'t, T: Scalar>(x: &Var<'t, T>) -> Var<'t, T> {
    let n = T::from_usize_lossy(x.value().numel());
    scale(&sum(x), T::one() / n)
}
