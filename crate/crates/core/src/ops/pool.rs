use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

/// Mean over `axis`, which is kept with extent 1.
pub fn mean_axis<'t, T: Scalar>(x: &Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(shape_err!("mean over axis {axis} of {shape:?}"));
    }
    let outer: usize = shape[..axis].iter().product();
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let inv = T::one() / T::from_usize_lossy(d);
    let src = x.value().data();
    let mut y = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut y[o * inner..(o + 1) * inner];
        for k in 0..d {
            let row = &src[(o * d + k) * inner..(o * d + k + 1) * inner];
            for (a, &v) in dst.iter_mut().zip(row) {
                *a += v;
            }
        }
        dst.iter_mut().for_each(|v| *v *= inv);
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = 1;
    let out = Tensor::new(&out_shape, y)?;
    Ok(x.tape().record(out, &[x], move |g, _| {
        let gd = g.data();
        let mut dx = vec![T::zero(); outer * d * inner];
        for o in 0..outer {
            let gr = &gd[o * inner..(o + 1) * inner];
            for k in 0..d {
                let dst = &mut dx[(o * d + k) * inner..(o * d + k + 1) * inner];
                for (a, &v) in dst.iter_mut().zip(gr) {
                    *a = v * inv;
                }
            }
        }
        Ok(vec![Some(Tensor::new(&shape, dx)?)])
    }))
}

/// Averages an NCHW map over its height: `[B, C, H, W] -> [B, C, 1, W]`.
pub fn pool_height_to_one<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    if x.shape().len() != 4 {
        return Err(shape_err!("pool_height_to_one expects NCHW, got {:?}", x.shape()));
    }
    mean_axis(x, 2)
}

/// Bilinear resize of the last two axes (half-pixel centers).
pub fn resize_bilinear_chw<'t, T: Scalar>(x: &Var<'t, T>, oh: usize, ow: usize) -> Result<Var<'t, T>> {
    let shape = x.shape().to_vec();
    let r = shape.len();
    if r < 2 || oh == 0 || ow == 0 {
        return Err(shape_err!("cannot resize {shape:?} to {oh}x{ow}"));
    }
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = x.value().numel() / (h * w);
    let y = kernels::resize_bilinear(x.value().data(), planes, h, w, oh, ow);
    let mut out_shape = shape.clone();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    let out = Tensor::new(&out_shape, y)?;
    Ok(x.tape().record(out, &[x], move |g, _| {
        let dx = kernels::resize_bilinear_backward(g.data(), planes, h, w, oh, ow);
        Ok(vec![Some(Tensor::new(&shape, dx)?)])
    }))
}
