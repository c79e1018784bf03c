//! Parameterized layers. Each layer registers its tensors in a
//! [`ParamStore`] at build time and keeps only their ids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::Result;
use crate::ops::{self, Conv2dSpec};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const LN_EPS: f64 = 1e-6;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with the given std, truncated at two standard deviations.
    TruncNormal(f64),
    /// Normal with std `sqrt(2 / fan_out)`.
    KaimingNormal,
    Zeros,
    Ones,
}

/// Registers parameters under hierarchical names and draws their initial
/// values from one seeded stream.
pub struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Adds a trainable tensor. `fan_out` feeds [`Init::KaimingNormal`].
    pub fn weight(&mut self, name: &str, shape: &[usize], init: Init, fan_out: usize) -> Result<ParamId> {
        let value = match init {
            Init::TruncNormal(std) => Tensor::trunc_normal(shape, std, &mut self.rng),
            Init::KaimingNormal => Tensor::randn(shape, (2.0 / fan_out as f64).sqrt(), &mut self.rng),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
        };
        self.store.add(name, value, ParamKind::Weight)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.store.add(name, value, ParamKind::Buffer)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        Self::with_init(b, name, din, dout, bias, Init::TruncNormal(0.02))
    }

    pub fn with_init<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = b.weight(&format!("{name}.weight"), &[dout, din], init, dout)?;
        let bias = if bias {
            Some(b.weight(&format!("{name}.bias"), &[dout], Init::Zeros, dout)?)
        } else {
            None
        };
        Ok(Self { weight, bias, din, dout })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let bias = self.bias.map(|id| ctx.p(id));
        ops::linear(x, &ctx.p(self.weight), bias.as_ref())
    }
}

/// NCHW convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let fan_out = cout / spec.groups * kernel.0 * kernel.1;
        let weight = b.weight(
            &format!("{name}.weight"),
            &[cout, cin / spec.groups, kernel.0, kernel.1],
            init,
            fan_out,
        )?;
        let bias = if bias {
            Some(b.weight(&format!("{name}.bias"), &[cout], Init::Zeros, cout)?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let bias = self.bias.map(|id| ctx.p(id));
        ops::conv2d(x, &ctx.p(self.weight), bias.as_ref(), self.spec)
    }
}

/// Depthwise convolution over a channels-last map.
#[derive(Clone, Debug)]
pub struct DwConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl DwConv {
    /// Same-size `k x k` depthwise conv.
    pub fn same<T: Scalar>(b: &mut Builder<'_, T>, name: &str, c: usize, k: usize, init: Init) -> Result<Self> {
        Self::new(b, name, c, (k, k), (1, 1), (k / 2, k / 2), init)
    }

    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        init: Init,
    ) -> Result<Self> {
        let weight = b.weight(&format!("{name}.weight"), &[c, 1, kernel.0, kernel.1], init, kernel.0 * kernel.1)?;
        let bias = b.weight(&format!("{name}.bias"), &[c], Init::Zeros, c)?;
        Ok(Self { weight, bias, stride, pad })
    }

    /// `x` is `[B, H, W, C]`.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::dwconv_nhwc(x, &ctx.p(self.weight), Some(&ctx.p(self.bias)), self.stride, self.pad)
    }

    /// Like [`forward`](Self::forward) but with the stride on any axis
    /// shorter than the kernel replaced by 1.
    pub fn forward_clamped<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (stride, pad) = clamped_geometry(ctx.params.value(self.weight).shape(), x.shape(), self.stride, self.pad);
        ops::dwconv_nhwc(x, &ctx.p(self.weight), Some(&ctx.p(self.bias)), stride, pad)
    }
}

/// Stride and padding a reduction conv uses on a `[B, H, W, C]` input: an
/// axis whose extent is below the kernel size keeps stride 1.
pub fn clamped_geometry(
    weight_shape: &[usize],
    x_shape: &[usize],
    stride: (usize, usize),
    pad: (usize, usize),
) -> ((usize, usize), (usize, usize)) {
    let (kh, kw) = (weight_shape[2], weight_shape[3]);
    let sh = if x_shape[1] < kh { 1 } else { stride.0 };
    let sw = if x_shape[2] < kw { 1 } else { stride.1 };
    ((sh, sw), pad)
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.weight(&format!("{name}.weight"), &[c], Init::Ones, c)?,
            beta: b.weight(&format!("{name}.bias"), &[c], Init::Zeros, c)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::layer_norm(x, &ctx.p(self.gamma), &ctx.p(self.beta), LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.weight(&format!("{name}.weight"), &[c], Init::Ones, c)?,
            beta: b.weight(&format!("{name}.bias"), &[c], Init::Zeros, c)?,
            running_mean: b.buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]))?,
            running_var: b.buffer(&format!("{name}.running_var"), Tensor::ones(&[c]))?,
        })
    }

    /// `x` is NCHW. Training mode queues running-stat updates on `ctx`.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (y, stats) = ops::batch_norm(
            x,
            &ctx.p(self.gamma),
            &ctx.p(self.beta),
            (ctx.params.value(self.running_mean), ctx.params.value(self.running_var)),
            ctx.train(),
            BN_MOMENTUM,
            BN_EPS,
        )?;
        if let Some(s) = stats {
            ctx.push_stat_update(self.running_mean, s.mean);
            ctx.push_stat_update(self.running_var, s.var);
        }
        Ok(y)
    }
}
