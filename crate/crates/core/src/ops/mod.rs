//! Differentiable primitives over [`Var`](crate::autograd::Var).
//!
//! Each op validates shapes, evaluates eagerly with the kernels in
//! [`crate::kernels`], and records an analytic backward when any input
//! requires a gradient.

mod act;
mod arith;
mod conv;
mod linalg;
mod norm;
mod pool;
mod shape;

pub use act::{dropout, gelu, hardswish, log_softmax_lastdim, softmax_lastdim, Activation};
pub use arith::{add, add_suffix, mean, mul, mul_suffix_const, scale, sub, sum};
pub use conv::{conv2d, dwconv_nhwc, Conv2dSpec};
pub use linalg::{bmm, linear};
pub use norm::{batch_norm, layer_norm, BatchNormStats};
pub use pool::{mean_axis, pool_height_to_one, resize_bilinear_chw};
pub use shape::{concat, narrow, permute, reshape};

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates executed by matmul-like ops on this thread since the
/// last [`reset_mac_count`]. Elementwise ops are not counted.
pub fn mac_count() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

pub(crate) fn add_macs(n: usize) {
    MACS.with(|c| c.set(c.get() + n as u64));
}
