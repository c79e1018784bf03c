use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

use super::add_macs;

/// `y = x·Wᵀ + b` over the last axis of `x`.
pub fn linear<'t, T: Scalar>(x: &Var<'t, T>, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let din = *xs.last().expect("non-empty shape");
    if ws.len() != 2 || ws[1] != din {
        return Err(shape_err!("linear: input {xs:?} incompatible with weight {ws:?}"));
    }
    let dout = ws[0];
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(shape_err!("linear: bias {:?} does not match {dout} outputs", b.shape()));
        }
    }
    let m = x.value().numel() / din;
    add_macs(m * din * dout);
    let mut y = vec![T::zero(); m * dout];
    kernels::matmul_xwt(x.value().data(), weight.value().data(), &mut y, m, din, dout);
    if let Some(b) = bias {
        let bv = b.value().data();
        for row in y.chunks_exact_mut(dout) {
            for (o, &v) in row.iter_mut().zip(bv) {
                *o += v;
            }
        }
    }
    let mut out_shape = xs.to_vec();
    *out_shape.last_mut().expect("non-empty shape") = dout;
    let out = Tensor::new(&out_shape, y)?;

    let (xv, wv) = (x.value_arc(), weight.value_arc());
    let in_shape = xs.to_vec();
    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape().record(out, &parents, move |g, needs| {
        let gd = g.data();
        let dx = if needs[0] {
            let mut dx = vec![T::zero(); m * din];
            kernels::matmul_dyw(gd, wv.data(), &mut dx, m, din, dout);
            Some(Tensor::new(&in_shape, dx)?)
        } else {
            None
        };
        let dw = if needs[1] {
            Some(Tensor::new(&[dout, din], kernels::matmul_dytx(gd, xv.data(), m, din, dout))?)
        } else {
            None
        };
        let mut grads = vec![dx, dw];
        if needs.len() == 3 {
            grads.push(if needs[2] {
                Some(Tensor::new(&[dout], kernels::sum_rows(gd, m, dout))?)
            } else {
                None
            });
        }
        Ok(grads)
    }))
}

/// Batched matrix product over matching leading axes. The last two axes of
/// each operand hold the matrix; `ta`/`tb` use its transpose.
pub fn bmm<'t, T: Scalar>(a: &Var<'t, T>, b: &Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
        return Err(shape_err!("bmm: incompatible shapes {sa:?} and {sb:?}"));
    }
    let r = sa.len();
    let (m, k) = if ta { (sa[r - 1], sa[r - 2]) } else { (sa[r - 2], sa[r - 1]) };
    let (k2, n) = if tb { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
    if k != k2 {
        return Err(shape_err!("bmm: inner dimensions {k} and {k2} differ ({sa:?} x {sb:?})"));
    }
    let batch: usize = sa[..r - 2].iter().product();
    add_macs(batch * m * k * n);
    let c = kernels::bmm(a.value().data(), b.value().data(), batch, m, k, n, ta, tb);
    let mut out_shape = sa[..r - 2].to_vec();
    out_shape.extend([m, n]);
    let out = Tensor::new(&out_shape, c)?;
    let (av, bv) = (a.value_arc(), b.value_arc());
    Ok(a.tape().record(out, &[a, b], move |g, needs| {
        let gd = g.data();
        let da = needs[0].then(|| {
            if ta {
                kernels::bmm(bv.data(), gd, batch, k, n, m, tb, true)
            } else {
                kernels::bmm(gd, bv.data(), batch, m, n, k, false, !tb)
            }
        });
        let db = needs[1].then(|| {
            if tb {
                kernels::bmm(gd, av.data(), batch, n, m, k, true, ta)
            } else {
                kernels::bmm(av.data(), gd, batch, k, m, n, !ta, false)
            }
        });
        Ok(vec![
            da.map(|d| Tensor::new(&sa, d)).transpose()?,
            db.map(|d| Tensor::new(&sb, d)).transpose()?,
        ])
    }))
}
