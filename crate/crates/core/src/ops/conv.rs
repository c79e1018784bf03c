use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::kernels::{self, ConvGeom, DwGeom};
use crate::tensor::{Scalar, Tensor};

use super::add_macs;

/// Stride, zero padding and grouping of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: (usize, usize), pad: (usize, usize), groups: usize) -> Self {
        Self { stride, pad, groups }
    }
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self::new((1, 1), (0, 0), 1)
    }
}

fn check_window(h: usize, w: usize, kh: usize, kw: usize, spec: &Conv2dSpec) -> Result<()> {
    if spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(shape_err!("convolution stride must be positive"));
    }
    if h + 2 * spec.pad.0 < kh || w + 2 * spec.pad.1 < kw {
        return Err(shape_err!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * spec.pad.0,
            w + 2 * spec.pad.1
        ));
    }
    Ok(())
}

/// NCHW cross-correlation with weight `[Cout, Cin/groups, kh, kw]`.
pub fn conv2d<'t, T: Scalar>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    spec: Conv2dSpec,
) -> Result<Var<'t, T>> {
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(shape_err!("conv2d expects 4-D input and weight, got {xs:?} and {ws:?}"));
    }
    let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let groups = spec.groups;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
        return Err(shape_err!(
            "conv2d: input channels {cin}, weight {ws:?} and groups {groups} are inconsistent"
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err!("conv2d: bias {:?} does not match {cout} outputs", b.shape()));
        }
    }
    check_window(h, w, kh, kw, &spec)?;
    let g = ConvGeom {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        sh: spec.stride.0,
        sw: spec.stride.1,
        ph: spec.pad.0,
        pw: spec.pad.1,
        groups,
    };
    let (oh, ow) = (g.out_h(), g.out_w());
    add_macs(batch * cout * cin_g * kh * kw * oh * ow);
    let y = kernels::conv2d_forward(
        x.value().data(),
        weight.value().data(),
        bias.map(|b| b.value().data()),
        batch,
        &g,
    );
    let out = Tensor::new(&[batch, cout, oh, ow], y)?;
    let (xv, wv) = (x.value_arc(), weight.value_arc());
    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape().record(out, &parents, move |dy, needs| {
        let dx = if needs[0] {
            Some(Tensor::new(&xs, kernels::conv2d_backward_input(dy.data(), wv.data(), batch, &g))?)
        } else {
            None
        };
        let mut grads = vec![dx];
        if needs[1] || needs.get(2).copied().unwrap_or(false) {
            let (dw, db) = kernels::conv2d_backward_params(dy.data(), xv.data(), batch, &g);
            grads.push(if needs[1] { Some(Tensor::new(&ws, dw)?) } else { None });
            if needs.len() == 3 {
                grads.push(if needs[2] { Some(Tensor::new(&[cout], db)?) } else { None });
            }
        } else {
            grads.resize_with(needs.len(), || None);
        }
        Ok(grads)
    }))
}

/// Depthwise convolution on a channels-last `[B, H, W, C]` map with weight
/// `[C, 1, kh, kw]`.
pub fn dwconv_nhwc<'t, T: Scalar>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Var<'t, T>> {
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[3] || ws[1] != 1 {
        return Err(shape_err!("dwconv: input {xs:?} incompatible with weight {ws:?}"));
    }
    let (batch, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
    let (kh, kw) = (ws[2], ws[3]);
    if let Some(b) = bias {
        if b.shape() != [c] {
            return Err(shape_err!("dwconv: bias {:?} does not match {c} channels", b.shape()));
        }
    }
    check_window(h, w, kh, kw, &Conv2dSpec::new(stride, pad, c))?;
    let g = DwGeom {
        h,
        w,
        c,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: pad.0,
        pw: pad.1,
    };
    let (oh, ow) = (g.out_h(), g.out_w());
    add_macs(batch * oh * ow * c * kh * kw);
    let y = kernels::dwconv_nhwc_forward(
        x.value().data(),
        weight.value().data(),
        bias.map(|b| b.value().data()),
        batch,
        &g,
    );
    let out = Tensor::new(&[batch, oh, ow, c], y)?;
    let (xv, wv) = (x.value_arc(), weight.value_arc());
    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape().record(out, &parents, move |dy, needs| {
        let dx = if needs[0] {
            Some(Tensor::new(&xs, kernels::dwconv_nhwc_backward_input(dy.data(), wv.data(), batch, &g))?)
        } else {
            None
        };
        let mut grads = vec![dx];
        if needs[1] || needs.get(2).copied().unwrap_or(false) {
            let (dw, db) = kernels::dwconv_nhwc_backward_params(dy.data(), xv.data(), batch, &g);
            grads.push(if needs[1] { Some(Tensor::new(&ws, dw)?) } else { None });
            if needs.len() == 3 {
                grads.push(if needs[2] { Some(Tensor::new(&[c], db)?) } else { None });
            }
        } else {
            grads.resize_with(needs.len(), || None);
        }
        Ok(grads)
    }))
}
