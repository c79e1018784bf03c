//! Perturbation and shape checks shared by the module suites and the
//! acceptance run. Each returns a description of the first violation.

use viptr::attention::{AttnConfig, AttnKind, CsWin, Masa, ParallelBlock, PeKind};
use viptr::backbone::{build_model, Model, VariantConfig};
use viptr::ctc::Alphabet;
use viptr::io::{load_checkpoint, save_checkpoint};
use viptr::{Ctx, Mode, ParamKind, ParamStore, Tape, Tensor};

use super::{build, randn, rng};

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Token heights entering stage 1..4 and leaving stage 4, plus the widths.
pub fn pyramid(variant: &str, width: usize) -> (Vec<usize>, Vec<usize>) {
    let cfg = VariantConfig::variant(variant).unwrap();
    let (model, store) = build_model::<f32>(&cfg, 0).unwrap();
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
    let run = |mut x, s: usize| {
        for b in &model.stages[s] {
            x = b.forward(&ctx, &x).unwrap();
        }
        x
    };
    let img = Tensor::uniform(&[1, 3, 32, width], -1.0, 1.0, &mut rng(0));
    let x0 = model.embed(&ctx, &tape.constant(img)).unwrap();
    let x1 = model.hdr1.forward(&ctx, &run(x0.clone(), 0)).unwrap();
    let x2 = model.hdr2.forward(&ctx, &run(x1.clone(), 1)).unwrap();
    let x3 = model.hdr_pool.forward(&ctx, &run(x2.clone(), 2)).unwrap();
    let x4 = run(x3.clone(), 3);
    let all = [x0, x1, x2, x3, x4];
    (all.iter().map(|x| x.shape()[1]).collect(), all.iter().map(|x| x.shape()[2]).collect())
}

pub fn check_pyramid() -> Check {
    for v in viptr::backbone::VARIANTS {
        let (h, w) = pyramid(v, 96);
        ensure(h == [8, 4, 2, 1, 1], || format!("{v}: heights {h:?}"))?;
        ensure(w.iter().all(|&w| w == 24), || format!("{v}: widths {w:?}"))?;
    }
    Ok(())
}

/// Perturbs one token and checks that the horizontal-stripe half of the
/// channels changes only inside that token's row band, and the vertical
/// half only inside its column band.
pub fn check_stripe_locality(seed: u64) -> Check {
    let heads = if seed.is_multiple_of(2) { 2 } else { 1 };
    let mut cfg = AttnConfig::new(AttnKind::CsWin, 8, heads);
    cfg.split_window = 2;
    let (m, store) = build(seed, |b| CsWin::new(b, "cswin", &cfg).unwrap());
    let (h, w, c) = (4, 6, 8);
    let x = randn(&[1, h, w, c], seed);
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
    let base = m.attend_stripes(&ctx, &tape.constant(x.clone())).unwrap().0;
    // Token (1, 3): row band 0-1, column band 2-3.
    let mut xp = x.clone();
    for ch in 0..c {
        xp.data_mut()[(w + 3) * c + ch] += 0.7;
    }
    let pert = m.attend_stripes(&ctx, &tape.constant(xp)).unwrap().0;
    let half = c / 2;
    let mut reached = (false, false);
    for y in 0..h {
        for xx in 0..w {
            let at = |t: &Tensor<f64>, r: std::ops::Range<usize>| t.data()[(y * w + xx) * c..][r].to_vec();
            let horizontal = at(base.value(), 0..half) != at(pert.value(), 0..half);
            let vertical = at(base.value(), half..c) != at(pert.value(), half..c);
            ensure(!horizontal || y / 2 == 0, || format!("horizontal stripe leaked to row {y}"))?;
            ensure(!vertical || xx / 2 == 1, || format!("vertical stripe leaked to column {xx}"))?;
            reached.0 |= horizontal;
            reached.1 |= vertical;
        }
    }
    ensure(reached.0 && reached.1, || "perturbation did not reach its own stripes".into())
}

/// Perturbing a channel of one half of the normalized input leaves the
/// other branch bitwise unchanged.
pub fn check_branch_isolation(seed: u64) -> Check {
    let local = if seed.is_multiple_of(2) { AttnKind::CsWin } else { AttnKind::Masa };
    let global = if seed % 4 < 2 { AttnKind::Osra } else { AttnKind::Mhsa };
    let mut l = AttnConfig::new(local, 4, 1);
    l.split_window = 2;
    let g = AttnConfig::new(global, 4, 1);
    let (m, store) = build(seed, |b| ParallelBlock::new(b, "par", 8, &l, &g, PeKind::Lepe).unwrap());
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
    let n = randn(&[1, 4, 6, 8], seed);
    let (l0, g0) = m.branches(&ctx, &tape.constant(n.clone())).unwrap();
    let mut np = n.clone();
    np.data_mut()[(2 * 6 + 1) * 8 + 2] += 0.5;
    let (l1, g1) = m.branches(&ctx, &tape.constant(np)).unwrap();
    ensure(g0.value() == g1.value(), || format!("{global:?} branch saw a local-half perturbation"))?;
    ensure(l0.value() != l1.value(), || format!("{local:?} branch ignored its own input"))?;
    let mut nq = n.clone();
    nq.data_mut()[5 * 8 + 6] += 0.5;
    let (l2, g2) = m.branches(&ctx, &tape.constant(nq)).unwrap();
    ensure(l0.value() == l2.value(), || format!("{local:?} branch saw a global-half perturbation"))?;
    ensure(g0.value() != g2.value(), || format!("{global:?} branch ignored its own input"))
}

pub fn masa(seed: u64, heads: usize, gammas: Option<Vec<f64>>) -> (Masa, ParamStore<f64>) {
    let mut cfg = AttnConfig::new(AttnKind::Masa, 4 * heads, heads);
    if let Some(g) = gammas {
        cfg.gammas = g;
    }
    build(seed, |b| Masa::new(b, "masa", &cfg).unwrap())
}

/// Pairwise composite weights `A[q][k]` of a single-head D-MaSA over a grid
/// of at most 4 tokens: tokens are one-hot inputs and V is the identity, so
/// output channel `k` at query `q` is the weight `q` gives to `k`. Query and
/// key weights are scaled by `qk_scale`.
pub fn composite_weights(m: &Masa, store: &mut ParamStore<f64>, h: usize, w: usize, qk_scale: f64) -> Vec<Vec<f64>> {
    let c = 4;
    let wid = m.qkv.weight;
    let mut wt = store.value(wid).clone();
    for o in 0..3 * c {
        for i in 0..c {
            let v = &mut wt.data_mut()[o * c + i];
            if o >= 2 * c {
                *v = if o - 2 * c == i { 1.0 } else { 0.0 };
            } else {
                *v *= qk_scale;
            }
        }
    }
    store.set_value(wid, wt).unwrap();
    store.set_value(m.qkv.bias.unwrap(), Tensor::zeros(&[3 * c])).unwrap();
    let n = h * w;
    let mut x = Tensor::zeros(&[1, h, w, c]);
    for t in 0..n {
        x.data_mut()[t * c + t] = 1.0;
    }
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, store, Mode::Eval, 0);
    let o = m.attend_axial(&ctx, &tape.constant(x)).unwrap().0;
    (0..n).map(|q| o.value().data()[q * c..q * c + n].to_vec()).collect()
}

/// Every composite attention row is non-negative and sums to at most one.
pub fn check_decay_row_sums(seed: u64) -> Check {
    let (m, mut store) = masa(seed, 1, None);
    for (h, w) in [(2, 2), (1, 4), (4, 1)] {
        for (q, row) in composite_weights(&m, &mut store, h, w, 3.0).iter().enumerate() {
            let sum: f64 = row.iter().sum();
            ensure(sum <= 1.0 + 1e-12 && row.iter().all(|&v| v >= 0.0), || {
                format!("{h}x{w} query {q}: row {row:?} sums to {sum}")
            })?;
        }
    }
    Ok(())
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn logits(model: &Model, store: &ParamStore<f32>) -> Tensor<f32> {
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, store, Mode::Eval, 0);
    let img = Tensor::uniform(&[1, 3, 32, 64], -1.0, 1.0, &mut rng(9));
    model.logits(&ctx, &tape.constant(img)).unwrap().value().clone()
}

/// Saves and reloads a model whose weights and running statistics are all
/// randomized, comparing every value bit for bit and the forward output.
pub fn check_checkpoint_round_trip(variant: &str) -> Check {
    let cfg = VariantConfig::variant(variant).unwrap();
    let (model, mut store) = build_model::<f32>(&cfg, 3).unwrap();
    let mut r = rng(11);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let buffer = store.get(id).kind == ParamKind::Buffer;
        for v in store.value_mut(id).data_mut() {
            *v = if buffer { 0.5 + rand::Rng::random::<f32>(&mut r) } else { *v + rand::Rng::random_range(&mut r, -0.01..0.01) };
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_checkpoint(dir.path(), &model, &store, &Alphabet::english()).map_err(|e| e.to_string())?;
    let back = load_checkpoint(dir.path()).map_err(|e| e.to_string())?;
    ensure(back.store.len() == store.len(), || "parameter count changed".into())?;
    for id in store.ids() {
        let p = store.get(id);
        let q = back.store.get(back.store.id(&p.name).ok_or(format!("{} missing", p.name))?);
        ensure(p.kind == q.kind && bits(p.value()) == bits(q.value()), || format!("{} differs", p.name))?;
    }
    ensure(bits(&logits(&model, &store)) == bits(&logits(&back.model, &back.store)), || {
        "reloaded forward pass differs".into()
    })
}
