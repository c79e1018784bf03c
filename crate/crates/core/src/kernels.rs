//! Raw numeric kernels over slices. These know nothing about autodiff; the
//! differentiable ops in `ops` are thin wrappers that pair a forward kernel
//! with its backward kernels.
//!
//! Parallel loops always split work into fixed-size pieces and reduce partial
//! sums in index order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::tensor::{strides, Scalar};

/// Rows per parallel GEMM chunk.
const ROW_CHUNK: usize = 128;

/// `C (+)= op(A) * op(B)` on contiguous row-major buffers.
///
/// `A` is logically `m x k` and stored as `[m, k]`, or as `[k, m]` when
/// `ta` is set. `B` is logically `k x n`, stored `[k, n]` or `[n, k]` (`tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "matmul: lhs buffer too small");
    assert!(b.len() >= k * n, "matmul: rhs buffer too small");
    assert!(c.len() >= m * n, "matmul: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every strided access of an
    // m x k / k x n / m x n row-major (or transposed) operand.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `Y[M, N] = X[M, K] * W[N, K]^T`, parallel over row chunks.
pub(crate) fn matmul_xwt<T: Scalar>(x: &[T], w: &[T], y: &mut [T], m: usize, k: usize, n: usize) {
    if m <= ROW_CHUNK {
        matmul(x, w, y, m, k, n, false, true, false);
        return;
    }
    y.par_chunks_mut(ROW_CHUNK * n)
        .zip(x.par_chunks(ROW_CHUNK * k))
        .for_each(|(yc, xc)| {
            let rows = yc.len() / n;
            matmul(xc, w, yc, rows, k, n, false, true, false);
        });
}

/// `DX[M, K] = DY[M, N] * W[N, K]`, parallel over row chunks.
pub(crate) fn matmul_dyw<T: Scalar>(dy: &[T], w: &[T], dx: &mut [T], m: usize, k: usize, n: usize) {
    if m <= ROW_CHUNK {
        matmul(dy, w, dx, m, n, k, false, false, false);
        return;
    }
    dx.par_chunks_mut(ROW_CHUNK * k)
        .zip(dy.par_chunks(ROW_CHUNK * n))
        .for_each(|(dxc, dyc)| {
            let rows = dxc.len() / k;
            matmul(dyc, w, dxc, rows, n, k, false, false, false);
        });
}

/// `DW[N, K] = DY[M, N]^T * X[M, K]`, reducing fixed row chunks in order.
pub(crate) fn matmul_dytx<T: Scalar>(dy: &[T], x: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    const REDUCE_CHUNK: usize = 1024;
    let mut out = vec![T::zero(); n * k];
    if m <= REDUCE_CHUNK {
        matmul(dy, x, &mut out, n, m, k, true, false, false);
        return out;
    }
    let partials: Vec<Vec<T>> = dy
        .par_chunks(REDUCE_CHUNK * n)
        .zip(x.par_chunks(REDUCE_CHUNK * k))
        .map(|(dyc, xc)| {
            let rows = dyc.len() / n;
            let mut p = vec![T::zero(); n * k];
            matmul(dyc, xc, &mut p, n, rows, k, true, false, false);
            p
        })
        .collect();
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Column sums of a row-major `[m, n]` matrix.
pub(crate) fn sum_rows<T: Scalar>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for row in x[..m * n].chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Batched matmul: `batch` independent problems laid out contiguously.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bmm<T: Scalar>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    let (sa, sb, sc) = (m * k, k * n, m * n);
    if batch == 1 || sc * k < 4096 {
        for i in 0..batch {
            matmul(
                &a[i * sa..(i + 1) * sa],
                &b[i * sb..(i + 1) * sb],
                &mut c[i * sc..(i + 1) * sc],
                m,
                k,
                n,
                ta,
                tb,
                false,
            );
        }
    } else {
        c.par_chunks_mut(sc).enumerate().for_each(|(i, ci)| {
            matmul(
                &a[i * sa..(i + 1) * sa],
                &b[i * sb..(i + 1) * sb],
                ci,
                m,
                k,
                n,
                ta,
                tb,
                false,
            );
        });
    }
    c
}

/// Copies `src` (with `shape`) into a new buffer with axes reordered so that
/// output axis `i` is input axis `perm[i]`.
pub(crate) fn permute<T: Copy + Send + Sync>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let nd = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = shape.iter().product();
    let inner = out_shape[nd - 1];
    let inner_stride = src_strides[nd - 1];
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd - 1];
    let mut base = 0usize;
    for _ in 0..total / inner {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        }
        // Advance the odometer over the outer output axes.
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Geometry of a 2-D convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
}

/// Unfolds the channels of one group of one CHW image into `[cin_g*kh*kw, oh*ow]`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, group: usize, col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let c0 = group * g.cin_g();
    for ci in 0..g.cin_g() {
        let plane = &x[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for y in 0..oh {
                    let iy = (y * g.sh + i) as isize - g.ph as isize;
                    let dst = &mut row[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (xo, d) in dst.iter_mut().enumerate() {
                        let ix = (xo * g.sw + j) as isize - g.pw as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: accumulates columns back into one group of a CHW image.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, group: usize, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let c0 = group * g.cin_g();
    for ci in 0..g.cin_g() {
        let plane = &mut dx[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for y in 0..oh {
                    let iy = (y * g.sh + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (xo, &v) in row[y * ow..(y + 1) * ow].iter().enumerate() {
                        let ix = (xo * g.sw + j) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// NCHW convolution forward; `weight` is `[cout, cin/groups, kh, kw]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    batch: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let img_in = g.cin * g.h * g.w;
    let img_out = g.cout * p;
    let rows = g.col_rows();
    let mut out = vec![T::zero(); batch * img_out];
    out.par_chunks_mut(img_out)
        .enumerate()
        .for_each(|(b, ob)| {
            let xb = &x[b * img_in..(b + 1) * img_in];
            let mut col = vec![T::zero(); rows * p];
            for grp in 0..g.groups {
                im2col(xb, g, grp, &mut col);
                let wg = &weight[grp * g.cout_g() * rows..(grp + 1) * g.cout_g() * rows];
                let og = &mut ob[grp * g.cout_g() * p..(grp + 1) * g.cout_g() * p];
                matmul(wg, &col, og, g.cout_g(), rows, p, false, false, false);
            }
            if let Some(bias) = bias {
                for (co, plane) in ob.chunks_exact_mut(p).enumerate() {
                    for v in plane {
                        *v += bias[co];
                    }
                }
            }
        });
    out
}

/// Gradient of the convolution input.
pub(crate) fn conv2d_backward_input<T: Scalar>(
    dy: &[T],
    weight: &[T],
    batch: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let p = g.out_h() * g.out_w();
    let img_in = g.cin * g.h * g.w;
    let img_out = g.cout * p;
    let rows = g.col_rows();
    let mut dx = vec![T::zero(); batch * img_in];
    dx.par_chunks_mut(img_in).enumerate().for_each(|(b, dxb)| {
        let dyb = &dy[b * img_out..(b + 1) * img_out];
        let mut col = vec![T::zero(); rows * p];
        for grp in 0..g.groups {
            let wg = &weight[grp * g.cout_g() * rows..(grp + 1) * g.cout_g() * rows];
            let dyg = &dyb[grp * g.cout_g() * p..(grp + 1) * g.cout_g() * p];
            matmul(wg, dyg, &mut col, rows, g.cout_g(), p, true, false, false);
            col2im(&col, g, grp, dxb);
        }
    });
    dx
}

/// Gradients of the convolution weight and bias.
pub(crate) fn conv2d_backward_params<T: Scalar>(
    dy: &[T],
    x: &[T],
    batch: usize,
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let p = g.out_h() * g.out_w();
    let img_in = g.cin * g.h * g.w;
    let img_out = g.cout * p;
    let rows = g.col_rows();
    let wlen = g.cout * rows;
    let partials: Vec<Vec<T>> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let xb = &x[b * img_in..(b + 1) * img_in];
            let dyb = &dy[b * img_out..(b + 1) * img_out];
            let mut col = vec![T::zero(); rows * p];
            let mut dw = vec![T::zero(); wlen];
            for grp in 0..g.groups {
                im2col(xb, g, grp, &mut col);
                let dyg = &dyb[grp * g.cout_g() * p..(grp + 1) * g.cout_g() * p];
                let dwg = &mut dw[grp * g.cout_g() * rows..(grp + 1) * g.cout_g() * rows];
                matmul(dyg, &col, dwg, g.cout_g(), p, rows, false, true, false);
            }
            dw
        })
        .collect();
    let mut dw = vec![T::zero(); wlen];
    for part in partials {
        for (o, v) in dw.iter_mut().zip(part) {
            *o += v;
        }
    }
    let mut db = vec![T::zero(); g.cout];
    for b in 0..batch {
        for (co, plane) in dy[b * img_out..(b + 1) * img_out].chunks_exact(p).enumerate() {
            db[co] += plane.iter().copied().sum();
        }
    }
    (dw, db)
}

/// Geometry of a depthwise convolution over a channels-last `[H, W, C]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct DwGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl DwGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    /// Calls `f(out_pixel, in_pixel, tap)` for every in-bounds kernel tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for y in 0..oh {
            for x in 0..ow {
                let o = y * ow + x;
                for i in 0..self.kh {
                    let iy = (y * self.sh + i) as isize - self.ph as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for j in 0..self.kw {
                        let ix = (x * self.sw + j) as isize - self.pw as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        f(o, iy as usize * self.w + ix as usize, i * self.kw + j);
                    }
                }
            }
        }
    }
}

/// Reorders a `[c, 1, kh, kw]` depthwise weight into tap-major `[kh*kw, c]`.
pub(crate) fn dw_taps<T: Scalar>(weight: &[T], c: usize, taps: usize) -> Vec<T> {
    let mut t = vec![T::zero(); taps * c];
    for ch in 0..c {
        for k in 0..taps {
            t[k * c + ch] = weight[ch * taps + k];
        }
    }
    t
}

/// Depthwise convolution on `[B, H, W, C]`.
pub(crate) fn dwconv_nhwc_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    batch: usize,
    g: &DwGeom,
) -> Vec<T> {
    let c = g.c;
    let taps = dw_taps(weight, c, g.kh * g.kw);
    let img_in = g.h * g.w * c;
    let img_out = g.out_h() * g.out_w() * c;
    let mut out = vec![T::zero(); batch * img_out];
    out.par_chunks_mut(img_out).enumerate().for_each(|(b, ob)| {
        if let Some(bias) = bias {
            for px in ob.chunks_exact_mut(c) {
                px.copy_from_slice(bias);
            }
        }
        let xb = &x[b * img_in..(b + 1) * img_in];
        g.for_each_tap(|o, i, k| {
            let dst = &mut ob[o * c..(o + 1) * c];
            let src = &xb[i * c..(i + 1) * c];
            let wk = &taps[k * c..(k + 1) * c];
            for ((d, &s), &w) in dst.iter_mut().zip(src).zip(wk) {
                *d += s * w;
            }
        });
    });
    out
}

/// Gradient of the depthwise convolution input.
pub(crate) fn dwconv_nhwc_backward_input<T: Scalar>(
    dy: &[T],
    weight: &[T],
    batch: usize,
    g: &DwGeom,
) -> Vec<T> {
    let c = g.c;
    let taps = dw_taps(weight, c, g.kh * g.kw);
    let img_in = g.h * g.w * c;
    let img_out = g.out_h() * g.out_w() * c;
    let mut dx = vec![T::zero(); batch * img_in];
    dx.par_chunks_mut(img_in).enumerate().for_each(|(b, dxb)| {
        let dyb = &dy[b * img_out..(b + 1) * img_out];
        g.for_each_tap(|o, i, k| {
            let dst = &mut dxb[i * c..(i + 1) * c];
            let src = &dyb[o * c..(o + 1) * c];
            let wk = &taps[k * c..(k + 1) * c];
            for ((d, &s), &w) in dst.iter_mut().zip(src).zip(wk) {
                *d += s * w;
            }
        });
    });
    dx
}

/// Gradients of the depthwise weight (`[c, 1, kh, kw]` layout) and bias.
pub(crate) fn dwconv_nhwc_backward_params<T: Scalar>(
    dy: &[T],
    x: &[T],
    batch: usize,
    g: &DwGeom,
) -> (Vec<T>, Vec<T>) {
    let c = g.c;
    let ntaps = g.kh * g.kw;
    let img_in = g.h * g.w * c;
    let img_out = g.out_h() * g.out_w() * c;
    let partials: Vec<Vec<T>> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let xb = &x[b * img_in..(b + 1) * img_in];
            let dyb = &dy[b * img_out..(b + 1) * img_out];
            let mut acc = vec![T::zero(); ntaps * c];
            g.for_each_tap(|o, i, k| {
                let dst = &mut acc[k * c..(k + 1) * c];
                let d = &dyb[o * c..(o + 1) * c];
                let s = &xb[i * c..(i + 1) * c];
                for ((a, &dv), &sv) in dst.iter_mut().zip(d).zip(s) {
                    *a += dv * sv;
                }
            });
            acc
        })
        .collect();
    let mut acc = vec![T::zero(); ntaps * c];
    for part in partials {
        for (o, v) in acc.iter_mut().zip(part) {
            *o += v;
        }
    }
    let mut dw = vec![T::zero(); ntaps * c];
    for ch in 0..c {
        for k in 0..ntaps {
            dw[ch * ntaps + k] = acc[k * c + ch];
        }
    }
    let mut db = vec![T::zero(); c];
    for px in dy.chunks_exact(c) {
        for (o, &v) in db.iter_mut().zip(px) {
            *o += v;
        }
    }
    (dw, db)
}

/// Source taps and weights for linear interpolation along one axis, using
/// half-pixel centers (the `align_corners = false` convention).
pub(crate) fn linear_taps(src: usize, dst: usize) -> Vec<[(usize, f64); 2]> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let l = pos - i0 as f64;
            [(i0, 1.0 - l), (i1, l)]
        })
        .collect()
}

/// Bilinear resize of `planes` planes of `h x w` to `oh x ow`.
pub(crate) fn resize_bilinear<T: Scalar>(
    src: &[T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (y, wy) in ty.iter().enumerate() {
            for (x, wx) in tx.iter().enumerate() {
                let mut acc = 0.0;
                for &(iy, a) in wy {
                    for &(ix, b) in wx {
                        acc += a * b * s[iy * w + ix].to_f64_lossy();
                    }
                }
                o[y * ow + x] = T::from_f64_lossy(acc);
            }
        }
    }
    out
}

/// Adjoint of `resize_bilinear`.
pub(crate) fn resize_bilinear_backward<T: Scalar>(
    dout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let d = &dout[p * oh * ow..(p + 1) * oh * ow];
        let g = &mut dx[p * h * w..(p + 1) * h * w];
        for (y, wy) in ty.iter().enumerate() {
            for (x, wx) in tx.iter().enumerate() {
                let v = d[y * ow + x].to_f64_lossy();
                for &(iy, a) in wy {
                    for &(ix, b) in wx {
                        g[iy * w + ix] += T::from_f64_lossy(a * b * v);
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        permute(a, &[r, c], &[1, 0])
    }

    #[test]
    fn matmul_transpose_flags() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let want = naive_matmul(&a, &b, m, k, n);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { transpose(&a, m, k) } else { a.clone() };
            let bb = if tb { transpose(&b, k, n) } else { b.clone() };
            let mut c = vec![0.0; m * n];
            matmul(&aa, &bb, &mut c, m, k, n, ta, tb, false);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chunked_products_match_single_call() {
        let (m, k, n) = (700, 9, 6);
        let x: Vec<f64> = (0..m * k).map(|v| ((v * 7 % 13) as f64) - 6.0).collect();
        let w: Vec<f64> = (0..n * k).map(|v| ((v * 5 % 11) as f64) - 5.0).collect();
        let mut y = vec![0.0; m * n];
        matmul_xwt(&x, &w, &mut y, m, k, n);
        let mut y1 = vec![0.0; m * n];
        matmul(&x, &w, &mut y1, m, k, n, false, true, false);
        assert_eq!(y, y1);
        let dw = matmul_dytx(&y, &x, m, k, n);
        let mut dw1 = vec![0.0; n * k];
        matmul(&y, &x, &mut dw1, n, m, k, true, false, false);
        for (a, b) in dw.iter().zip(&dw1) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn permute_roundtrip() {
        let shape = [2, 3, 4, 5];
        let src: Vec<u32> = (0..120).collect();
        let perm = [2, 0, 3, 1];
        let p = permute(&src, &shape, &perm);
        let pshape: Vec<usize> = perm.iter().map(|&i| shape[i]).collect();
        // out[i,j,k,l] = src[j, l, i, k]
        assert_eq!(p[((2 + 1) * 5 + 2) * 3 + 2], src[((3 + 2) * 4 + 1) * 5 + 2]);
        let back = permute(&p, &pshape, &invert_perm(&perm));
        assert_eq!(back, src);
    }

    #[test]
    fn bilinear_identity_and_halving() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(resize_bilinear(&src, 1, 3, 4, 3, 4), src);
        // 2x downscale with half-pixel centers averages 2x2 blocks.
        let src: Vec<f64> = vec![0., 2., 4., 6., 2., 4., 6., 8.];
        let out = resize_bilinear(&src, 1, 2, 4, 1, 2);
        assert_eq!(out, vec![2.0, 6.0]);
    }

    #[test]
    fn conv_output_size() {
        let g = ConvGeom {
            cin: 3,
            h: 32,
            w: 96,
            cout: 8,
            kh: 3,
            kw: 3,
            sh: 2,
            sw: 2,
            ph: 1,
            pw: 1,
            groups: 1,
        };
        assert_eq!((g.out_h(), g.out_w()), (16, 48));
    }
}
