#![allow(dead_code)]

pub mod ctc_cases;
pub mod structural;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viptr::attention::{AttnConfig, AttnKind, Attention, Ffn, MixBlock, ParallelBlock, PeKind};
use viptr::backbone::{HdrConv, HdrPool, PatchEmbed, VariantConfig};
use viptr::ctc::ctc_loss_batch;
use viptr::gradcheck::{check_gradients, CheckOptions};
use viptr::nn::{Builder, Linear};
use viptr::ops::{self, Conv2dSpec};
use viptr::{Ctx, Mode, ParamKind, ParamStore, Tensor, Var};

pub type Case = (&'static str, fn(u64) -> f64);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// Inputs kept at least 0.05 away from the hardswish kinks at ±3.
fn away_from_kinks(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let mut t = Tensor::<f64>::uniform(shape, -4.0, 4.0, &mut r);
    for v in t.data_mut() {
        if (v.abs() - 3.0).abs() < 0.05 {
            *v *= 0.9;
        }
    }
    t
}

/// Builds modules into a fresh store, then perturbs every weight so that
/// zero- and one-initialized parameters do not hide gradient bugs.
pub fn build<M>(seed: u64, f: impl FnOnce(&mut Builder<'_, f64>) -> M) -> (M, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let m = f(&mut Builder::new(&mut store, seed));
    let mut r = rng(seed ^ 0xabcd);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.get(id).kind == ParamKind::Weight {
            for v in store.value_mut(id).data_mut() {
                *v += r.random_range(-0.3..0.3);
            }
        }
    }
    (m, store)
}

fn opts(seed: u64, mode: Mode) -> CheckOptions {
    CheckOptions { seed, mode, max_coords_per_tensor: Some(16), ..CheckOptions::default() }
}

fn check_fn(
    seed: u64,
    inputs: &[Tensor<f64>],
    f: impl for<'t, 's> Fn(&Ctx<'t, 's, f64>, &[Var<'t, f64>]) -> viptr::Result<Var<'t, f64>>,
) -> f64 {
    check_gradients(&ParamStore::new(), inputs, &opts(seed, Mode::Train), f)
        .unwrap()
        .max_rel_err
}

fn check_mod(
    seed: u64,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    f: impl for<'t, 's> Fn(&Ctx<'t, 's, f64>, &[Var<'t, f64>]) -> viptr::Result<Var<'t, f64>>,
) -> f64 {
    let r = check_gradients(store, inputs, &opts(seed, mode), f).unwrap();
    if r.max_rel_err > 1e-4 {
        eprintln!("worst coordinate: {}", r.worst);
    }
    r.max_rel_err
}

const NHWC: [usize; 4] = [2, 4, 6, 8];

fn attn_case(seed: u64, kind: AttnKind, heads: usize) -> f64 {
    let mut cfg = AttnConfig::new(kind, 8, heads);
    cfg.split_window = 2;
    let (m, store) = build(seed, |b| Attention::new(b, "attn", &cfg).unwrap());
    check_mod(seed, &store, &[randn(&NHWC, seed)], Mode::Eval, |ctx, x| m.forward(ctx, &x[0]))
}

pub fn primitive_cases() -> Vec<Case> {
    vec![
        ("add", |s| check_fn(s, &[randn(&[3, 4], s), randn(&[3, 4], s + 1)], |_, x| ops::add(&x[0], &x[1]))),
        ("sub", |s| check_fn(s, &[randn(&[3, 4], s), randn(&[3, 4], s + 1)], |_, x| ops::sub(&x[0], &x[1]))),
        ("mul", |s| check_fn(s, &[randn(&[3, 4], s), randn(&[3, 4], s + 1)], |_, x| ops::mul(&x[0], &x[1]))),
        ("add_suffix", |s| {
            check_fn(s, &[randn(&[2, 3, 4], s), randn(&[3, 4], s + 1)], |_, x| ops::add_suffix(&x[0], &x[1]))
        }),
        ("scale", |s| check_fn(s, &[randn(&[5], s)], |_, x| Ok(ops::scale(&x[0], -1.7)))),
        ("sum", |s| check_fn(s, &[randn(&[2, 5], s)], |_, x| Ok(ops::sum(&x[0])))),
        ("mean", |s| check_fn(s, &[randn(&[2, 5], s)], |_, x| Ok(ops::mean(&x[0])))),
        ("gelu", |s| check_fn(s, &[randn(&[4, 6], s).map(|v| 2.0 * v)], |_, x| Ok(ops::gelu(&x[0])))),
        ("hardswish", |s| check_fn(s, &[away_from_kinks(&[4, 6], s)], |_, x| Ok(ops::hardswish(&x[0])))),
        ("softmax", |s| check_fn(s, &[randn(&[3, 7], s)], |_, x| Ok(ops::softmax_lastdim(&x[0])))),
        ("log_softmax", |s| check_fn(s, &[randn(&[3, 7], s)], |_, x| Ok(ops::log_softmax_lastdim(&x[0])))),
        ("dropout", |s| {
            check_fn(s, &[randn(&[4, 8], s)], |ctx, x| ops::dropout(&x[0], 0.3, true, &mut *ctx.rng()))
        }),
        ("linear", |s| {
            check_fn(s, &[randn(&[2, 3, 5], s), randn(&[4, 5], s + 1), randn(&[4], s + 2)], |_, x| {
                ops::linear(&x[0], &x[1], Some(&x[2]))
            })
        }),
        ("bmm", |s| {
            check_fn(s, &[randn(&[2, 3, 4], s), randn(&[2, 4, 5], s + 1)], |_, x| ops::bmm(&x[0], &x[1], false, false))
        }),
        ("bmm_transposed", |s| {
            check_fn(s, &[randn(&[2, 4, 3], s), randn(&[2, 5, 4], s + 1)], |_, x| ops::bmm(&x[0], &x[1], true, true))
        }),
        ("conv2d", |s| {
            check_fn(s, &[randn(&[2, 3, 6, 5], s), randn(&[4, 3, 3, 3], s + 1), randn(&[4], s + 2)], |_, x| {
                ops::conv2d(&x[0], &x[1], Some(&x[2]), Conv2dSpec::new((2, 1), (1, 1), 1))
            })
        }),
        ("conv2d_grouped", |s| {
            check_fn(s, &[randn(&[1, 4, 5, 5], s), randn(&[6, 2, 2, 3], s + 1)], |_, x| {
                ops::conv2d(&x[0], &x[1], None, Conv2dSpec::new((1, 2), (0, 1), 2))
            })
        }),
        ("dwconv", |s| {
            check_fn(s, &[randn(&[2, 5, 6, 3], s), randn(&[3, 1, 3, 3], s + 1), randn(&[3], s + 2)], |_, x| {
                ops::dwconv_nhwc(&x[0], &x[1], Some(&x[2]), (2, 2), (1, 1))
            })
        }),
        ("layer_norm", |s| {
            check_fn(s, &[randn(&[3, 6], s), randn(&[6], s + 1), randn(&[6], s + 2)], |_, x| {
                ops::layer_norm(&x[0], &x[1], &x[2], 1e-6)
            })
        }),
        ("batch_norm_train", |s| {
            check_fn(s, &[randn(&[3, 2, 2, 3], s), randn(&[2], s + 1), randn(&[2], s + 2)], |_, x| {
                let rm = Tensor::zeros(&[2]);
                let rv = Tensor::ones(&[2]);
                Ok(ops::batch_norm(&x[0], &x[1], &x[2], (&rm, &rv), true, 0.9, 1e-5)?.0)
            })
        }),
        ("batch_norm_eval", |s| {
            check_fn(s, &[randn(&[2, 2, 2, 3], s), randn(&[2], s + 1), randn(&[2], s + 2)], |_, x| {
                let rm = Tensor::from_f64(&[2], &[0.3, -0.2]).unwrap();
                let rv = Tensor::from_f64(&[2], &[1.5, 0.5]).unwrap();
                Ok(ops::batch_norm(&x[0], &x[1], &x[2], (&rm, &rv), false, 0.9, 1e-5)?.0)
            })
        }),
        ("mean_axis", |s| check_fn(s, &[randn(&[2, 3, 4], s)], |_, x| ops::mean_axis(&x[0], 1))),
        ("pool_height", |s| check_fn(s, &[randn(&[2, 3, 4, 5], s)], |_, x| ops::pool_height_to_one(&x[0]))),
        ("resize_bilinear", |s| check_fn(s, &[randn(&[2, 3, 5], s)], |_, x| ops::resize_bilinear_chw(&x[0], 4, 8))),
        ("reshape_permute", |s| {
            check_fn(s, &[randn(&[2, 3, 4], s)], |_, x| ops::permute(&ops::reshape(&x[0], &[6, 4])?, &[1, 0]))
        }),
        ("narrow_concat", |s| {
            check_fn(s, &[randn(&[2, 5, 3], s), randn(&[2, 2, 3], s + 1)], |_, x| {
                let a = ops::narrow(&x[0], 1, 1, 3)?;
                ops::concat(&[&a, &x[1]], 1)
            })
        }),
    ]
}

pub fn block_cases() -> Vec<Case> {
    vec![
        ("cswin", |s| attn_case(s, AttnKind::CsWin, 2)),
        ("cswin_single_head", |s| attn_case(s, AttnKind::CsWin, 1)),
        ("masa", |s| attn_case(s, AttnKind::Masa, 2)),
        ("mhsa", |s| attn_case(s, AttnKind::Mhsa, 2)),
        ("osra", |s| attn_case(s, AttnKind::Osra, 2)),
        ("ffn", |s| {
            let (m, store) = build(s, |b| Ffn::new(b, "ffn", 8, 4).unwrap());
            check_mod(s, &store, &[randn(&NHWC, s)], Mode::Eval, |ctx, x| m.forward(ctx, &x[0]))
        }),
        ("mix_block_cpe", |s| {
            let cfg = AttnConfig::new(AttnKind::Mhsa, 8, 2);
            let (m, store) = build(s, |b| MixBlock::new(b, "blk", &cfg, PeKind::Cpe).unwrap());
            check_mod(s, &store, &[randn(&NHWC, s)], Mode::Eval, |ctx, x| m.forward(ctx, &x[0]))
        }),
        ("parallel_block", |s| {
            let mut l = AttnConfig::new(AttnKind::CsWin, 4, 1);
            l.split_window = 2;
            let g = AttnConfig::new(AttnKind::Osra, 4, 1);
            let (m, store) = build(s, |b| ParallelBlock::new(b, "par", 8, &l, &g, PeKind::Lepe).unwrap());
            check_mod(s, &store, &[randn(&NHWC, s)], Mode::Eval, |ctx, x| m.forward(ctx, &x[0]))
        }),
        ("hdr_conv", |s| {
            let (m, store) = build(s, |b| HdrConv::new(b, "hdr", 8, 6).unwrap());
            check_mod(s, &store, &[randn(&NHWC, s)], Mode::Eval, |ctx, x| m.forward(ctx, &x[0]))
        }),
        ("hdr_pool", |s| {
            let (m, store) = build(s, |b| HdrPool::new(b, "pool", 8, 6, 0.2).unwrap());
            check_mod(s, &store, &[randn(&NHWC, s)], Mode::Train, |ctx, x| m.forward(ctx, &x[0]))
        }),
        ("patch_embed", |s| {
            let (m, store) = build(s, |b| PatchEmbed::new(b, "pe", 4).unwrap());
            check_mod(s, &store, &[randn(&[2, 3, 8, 8], s)], Mode::Train, |ctx, x| m.forward(ctx, &x[0]))
        }),
        ("ctc_head", |s| {
            let (m, store) = build(s, |b| Linear::new(b, "head.fc", 6, 5, true).unwrap());
            check_mod(s, &store, &[randn(&[2, 6, 6], s)], Mode::Eval, |ctx, x| {
                ctc_loss_batch(&m.forward(ctx, &x[0])?, &[vec![1, 2], vec![3, 3]])
            })
        }),
    ]
}

/// A small model config: widths of 8, one block per stage.
pub fn toy_config(perm: &str, pe: PeKind) -> VariantConfig {
    let mut cfg = VariantConfig::new([8, 8, 8, 8], [1, 1, 1, 1], [1, 1, 1, 1], perm).unwrap();
    cfg.num_classes = 5;
    cfg.pe_kind = pe;
    cfg
}

pub fn image(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}
