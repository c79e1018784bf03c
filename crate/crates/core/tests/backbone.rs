mod common;

use common::structural::{check_pyramid, pyramid};
use viptr::attention::PeKind;
use viptr::backbone::{build_model, count_flops, count_params, CountScope, VariantConfig, VARIANTS};
use viptr::ops::{mac_count, reset_mac_count};
use viptr::{Ctx, Mode, Tape, Tensor};

fn toy(perm: &str) -> VariantConfig {
    let mut cfg = VariantConfig::new([8, 8, 8, 8], [1, 1, 1, 1], [1, 1, 1, 1], perm).unwrap();
    cfg.num_classes = 5;
    cfg
}

fn image(w: usize, seed: u64) -> Tensor<f32> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(&[1, 3, 32, w], -1.0, 1.0, &mut rng)
}

#[test]
fn analytic_macs_match_executed_macs() {
    let mut cases: Vec<VariantConfig> = ["[L1][L1G2][G1]", "[L2][L2//G2][G1]", "[L2][L1G1][G2]", "[L1][L2//G1][G1]"]
        .iter()
        .map(|p| toy(p))
        .collect();
    let mut cpe = toy("[L1][L2G2][G1]");
    cpe.pe_kind = PeKind::Cpe;
    cases.push(cpe);
    let mut none = toy("[L1][L2G2][G2]");
    none.pe_kind = PeKind::None;
    cases.push(none);
    cases.push(VariantConfig::variant("sviptr-v2-t").unwrap());
    for cfg in cases {
        let (model, store) = build_model::<f32>(&cfg, 1).unwrap();
        for w in [16, 96, 100] {
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
            reset_mac_count();
            model.logits(&ctx, &tape.input(image(w, 3))).unwrap();
            let executed = mac_count();
            let analytic = count_flops(&cfg, 32, w).unwrap().total();
            assert_eq!(executed, analytic, "{} at width {w}", cfg.permutation);
        }
    }
}

fn eval_logits(cfg: &VariantConfig, store_seed: u64, img: Tensor<f32>) -> (Tensor<f32>, Vec<String>) {
    let (model, store) = build_model::<f32>(cfg, store_seed).unwrap();
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
    let y = model.logits(&ctx, &tape.constant(img)).unwrap();
    (y.value().clone(), ctx.take_warnings())
}

#[test]
fn pyramid_halves_height_each_stage() {
    check_pyramid().unwrap();
    let (heights, widths) = pyramid("sviptr-v2-b", 320);
    assert_eq!(heights, [8, 4, 2, 1, 1]);
    assert_eq!(widths, [80; 5]);
}

#[test]
fn sequence_length_tracks_width() {
    for v in ["sviptr-v1-t", "sviptr-v2-t"] {
        let mut cfg = VariantConfig::variant(v).unwrap();
        cfg.pe_kind = PeKind::Lepe;
        for (w, t) in [(64, 16), (96, 24), (320, 80), (640, 160)] {
            let (y, _) = eval_logits(&cfg, 0, image(w, 1));
            assert_eq!(y.shape(), &[1, t, cfg.num_classes], "{v} at width {w}");
            assert!(y.is_finite());
        }
    }
}

#[test]
fn batch_items_are_independent() {
    let cfg = toy("[L2][L1//G1][G1]");
    let (a, b) = (image(40, 1), image(40, 2));
    let both = Tensor::new(&[2, 3, 32, 40], [a.data(), b.data()].concat()).unwrap();
    let (y, _) = eval_logits(&cfg, 3, both);
    let (ya, _) = eval_logits(&cfg, 3, a);
    let (yb, _) = eval_logits(&cfg, 3, b);
    let n = ya.numel();
    let diff = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max);
    assert!(diff(&y.data()[..n], ya.data()) < 1e-6);
    assert!(diff(&y.data()[n..], yb.data()) < 1e-6);
}

#[test]
fn absolute_positions_warn_only_when_resized() {
    let mut cfg = toy("[L1][L1G2][G1]");
    cfg.pe_kind = PeKind::Ape;
    let (_, quiet) = eval_logits(&cfg, 0, image(96, 0));
    assert!(quiet.is_empty(), "{quiet:?}");
    let (y, warned) = eval_logits(&cfg, 0, image(192, 0));
    assert_eq!(warned.len(), 1);
    assert_eq!(y.shape()[1], 48);
}

#[test]
fn rejects_heights_that_do_not_reduce() {
    let cfg = toy("[L1][L1G2][G1]");
    let (model, store) = build_model::<f32>(&cfg, 0).unwrap();
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
    let img = Tensor::zeros(&[1, 3, 24, 32]);
    assert!(model.logits(&ctx, &tape.constant(img)).is_err());
}

fn patch_embed_params(c0: usize) -> usize {
    let m = c0 / 2;
    (27 * m + m) + 2 * m + (9 * m * c0 + c0) + 2 * c0
}

fn block_params(c: usize, kind: &str) -> usize {
    let attn = match kind {
        "osra" => 4 * c * c + 26 * c,
        _ => 4 * c * c + 14 * c,
    };
    4 * c + attn + 8 * c * c + 5 * c
}

#[test]
fn toy_parameter_count_matches_closed_form() {
    let mut cfg = VariantConfig::new([8, 16, 16, 8], [1, 2, 1, 1], [1, 2, 2, 1], "[L1][L1//G2][G1]").unwrap();
    cfg.num_classes = 5;
    let (_, store) = build_model::<f32>(&cfg, 0).unwrap();
    let half = |c: usize| c / 2;
    let parallel = |c: usize| 4 * c + (4 * half(c) * half(c) + 14 * half(c)) + (4 * half(c) * half(c) + 26 * half(c)) + 8 * c * c + 5 * c;
    let expected = patch_embed_params(8)
        + block_params(8, "cswin")
        + (9 * 8 * 16 + 16 + 32)
        + 2 * parallel(16)
        + (9 * 16 * 16 + 16 + 32)
        + parallel(16)
        + (16 * 8 + 8)
        + block_params(8, "mhsa");
    assert_eq!(count_params(&store, CountScope::Backbone), expected);
    assert_eq!(count_params(&store, CountScope::Full), expected + 8 * 5 + 5);

    cfg.permutation = viptr::backbone::parse_permutation("[L1][L1G2][G1]").unwrap();
    let (_, store) = build_model::<f32>(&cfg, 0).unwrap();
    let series = patch_embed_params(8)
        + block_params(8, "cswin")
        + (9 * 8 * 16 + 48)
        + block_params(16, "cswin")
        + block_params(16, "osra")
        + (9 * 16 * 16 + 48)
        + block_params(16, "cswin")
        + (16 * 8 + 8)
        + block_params(8, "mhsa");
    assert_eq!(count_params(&store, CountScope::Backbone), series);
}

#[test]
fn patch_embed_count() {
    for c0 in [8, 64, 128, 192] {
        let mut store = viptr::ParamStore::<f32>::new();
        viptr::backbone::PatchEmbed::new(&mut viptr::nn::Builder::new(&mut store, 0), "pe", c0).unwrap();
        assert_eq!(store.count_weights(|_| true), patch_embed_params(c0));
    }
}

#[test]
fn parallel_middle_stages_are_cheaper() {
    let series = VariantConfig::variant("sviptr-v1-t").unwrap();
    let parallel = VariantConfig::variant("sviptr-v2-t").unwrap();
    let macs = |c: &VariantConfig| count_flops(c, 32, 96).unwrap().backbone();
    assert!(macs(&parallel) < macs(&series));
    let (_, ss) = build_model::<f32>(&series, 0).unwrap();
    let (_, ps) = build_model::<f32>(&parallel, 0).unwrap();
    assert!(count_params(&ps, CountScope::Backbone) < count_params(&ss, CountScope::Backbone));
}

#[test]
fn variant_sizes_are_ordered() {
    let macs: Vec<u64> = VARIANTS
        .iter()
        .map(|v| count_flops(&VariantConfig::variant(v).unwrap(), 32, 96).unwrap().backbone())
        .collect();
    // v1-t, v2-t, v2-b, v1-l
    assert!(macs[1] < macs[0] && macs[0] < macs[2] && macs[2] < macs[3]);
}

#[test]
fn every_parallel_permutation_beats_its_series_twin() {
    for s1 in ["L1", "L2"] {
        for l in ["L1", "L2"] {
            for g in ["G1", "G2"] {
                let series = format!("[{s1}][{l}{g}][G1]");
                let parallel = format!("[{s1}][{l}//{g}][G1]");
                let macs = |p: &str| {
                    let cfg = VariantConfig::new([64, 128, 256, 192], [3, 3, 3, 3], [2, 4, 4, 8], p).unwrap();
                    count_flops(&cfg, 32, 96).unwrap().backbone()
                };
                assert!(macs(&parallel) < macs(&series), "{parallel} vs {series}");
            }
        }
    }
}
