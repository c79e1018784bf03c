use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::kernels;
use crate::tensor::{check_shape, Scalar, Tensor};

/// Same data, new shape.
pub fn reshape<'t, T: Scalar>(x: &Var<'t, T>, shape: &[usize]) -> Result<Var<'t, T>> {
    let n = check_shape(shape)?;
    if n != x.value().numel() {
        return Err(shape_err!("cannot reshape {:?} into {shape:?}", x.shape()));
    }
    let in_shape = x.shape().to_vec();
    let out = x.value().clone().reshape(shape)?;
    Ok(x.tape().record(out, &[x], move |g, _| {
        Ok(vec![Some(g.clone().reshape(&in_shape)?)])
    }))
}

/// Reorders axes so that output axis `i` is input axis `perm[i]`.
pub fn permute<'t, T: Scalar>(x: &Var<'t, T>, perm: &[usize]) -> Result<Var<'t, T>> {
    let shape = x.shape().to_vec();
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
        return Err(shape_err!("invalid permutation {perm:?} for shape {shape:?}"));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let data = kernels::permute(x.value().data(), &shape, perm);
    let inv = kernels::invert_perm(perm);
    let out = Tensor::new(&out_shape, data)?;
    Ok(x.tape().record(out, &[x], move |g, _| {
        let d = kernels::permute(g.data(), g.shape(), &inv);
        Ok(vec![Some(Tensor::new(&shape, d)?)])
    }))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// The slice `[start, start + len)` along `axis`.
pub fn narrow<'t, T: Scalar>(x: &Var<'t, T>, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(shape_err!(
            "narrow(axis={axis}, start={start}, len={len}) out of range for {shape:?}"
        ));
    }
    let (outer, dim, inner) = split_axis(&shape, axis);
    let src = x.value().data();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * dim + start) * inner;
        data.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let out = Tensor::new(&out_shape, data)?;
    Ok(x.tape().record(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros(&shape);
        let d = dx.data_mut();
        for (o, chunk) in g.data().chunks_exact(len * inner).enumerate() {
            let base = (o * dim + start) * inner;
            d[base..base + len * inner].copy_from_slice(chunk);
        }
        Ok(vec![Some(dx)])
    }))
}

/// Joins tensors that agree on every axis except `axis`.
pub fn concat<'t, T: Scalar>(xs: &[&Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = xs.first().ok_or_else(|| shape_err!("concat of nothing"))?;
    let shape0 = first.shape().to_vec();
    if axis >= shape0.len() {
        return Err(shape_err!("concat axis {axis} out of range for {shape0:?}"));
    }
    let mut sizes = Vec::with_capacity(xs.len());
    for x in xs {
        let s = x.shape();
        let compatible = s.len() == shape0.len()
            && s.iter().zip(&shape0).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(shape_err!("concat shape mismatch: {:?} vs {shape0:?}", s));
        }
        sizes.push(s[axis]);
    }
    let total: usize = sizes.iter().sum();
    let (outer, _, inner) = split_axis(&shape0, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (x, &sz) in xs.iter().zip(&sizes) {
            let src = x.value().data();
            data.extend_from_slice(&src[o * sz * inner..(o + 1) * sz * inner]);
        }
    }
    let mut out_shape = shape0.clone();
    out_shape[axis] = total;
    let out = Tensor::new(&out_shape, data)?;
    let tape = first.tape();
    Ok(tape.record(out, xs, move |g, needs| {
        let gd = g.data();
        let mut grads = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for (i, &sz) in sizes.iter().enumerate() {
            if needs[i] {
                let mut d = Vec::with_capacity(outer * sz * inner);
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    d.extend_from_slice(&gd[base..base + sz * inner]);
                }
                let mut s = shape0.clone();
                s[axis] = sz;
                grads.push(Some(Tensor::new(&s, d)?));
            } else {
                grads.push(None);
            }
            offset += sz;
        }
        Ok(grads)
    }))
}
