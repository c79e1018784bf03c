mod common;

use common::structural::check_checkpoint_round_trip;
use std::fs;

use viptr::backbone::{build_model, VariantConfig};
use viptr::ctc::Alphabet;
use viptr::io::{
    decode_pnm, encode_ppm, encode_raw, load_checkpoint, load_image, read_manifest, save_checkpoint, RunConfig, BLOB,
    MANIFEST,
};
use viptr::train::{train, OptimHyper};
use viptr::{Ctx, Mode, ParamKind, Tape, Tensor};

fn small() -> VariantConfig {
    let mut cfg = VariantConfig::new([8, 16, 16, 8], [1, 1, 1, 1], [1, 2, 2, 1], "[L2][L2//G2][G1]").unwrap();
    cfg.num_classes = 11;
    cfg
}

fn digits() -> Alphabet {
    Alphabet::new(('0'..='9').map(String::from)).unwrap()
}

fn image(w: usize) -> Tensor<f32> {
    use rand::SeedableRng;
    Tensor::uniform(&[1, 3, 32, w], -1.0, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(4))
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    // Train briefly so batch-norm running statistics differ from their init.
    let mut run = RunConfig::parse(r#"{"channels":[8,16,16,8],"depths":[1,1,1,1],"heads":[1,2,2,1],"permutation":"[L2][L2//G2][G1]","data":{"train_samples":8,"val_samples":4}}"#)
        .unwrap()
        .resolve(Some(1))
        .unwrap();
    run.alphabet = digits();
    run.model.num_classes = 11;
    run.out_dir = None;
    run.hyper = OptimHyper { epochs: 1, warmup_epochs: 0, batch_size: 4, ..OptimHyper::default() };
    let out = train(&run).unwrap();
    save_checkpoint(dir.path(), &out.model, &out.store, &run.alphabet).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.alphabet, run.alphabet);
    assert_eq!(back.store.len(), out.store.len());
    for id in out.store.ids() {
        let p = out.store.get(id);
        let q = back.store.get(back.store.id(&p.name).unwrap());
        assert_eq!(p.kind, q.kind);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(p.value()), bits(q.value()), "{}", p.name);
    }
    let forward = |model: &viptr::backbone::Model, store| {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, store, Mode::Eval, 0);
        model.logits(&ctx, &tape.constant(image(64))).unwrap().value().clone()
    };
    assert_eq!(forward(&out.model, &out.store), forward(&back.model, &back.store));
}

#[test]
fn randomized_checkpoints_round_trip() {
    for v in ["sviptr-v1-t", "sviptr-v2-t"] {
        check_checkpoint_round_trip(v).unwrap();
    }
}

#[test]
fn manifest_lists_every_parameter_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    let (model, store) = build_model::<f32>(&small(), 2).unwrap();
    save_checkpoint(dir.path(), &model, &store, &digits()).unwrap();
    let entries = read_manifest(dir.path()).unwrap();
    assert_eq!(entries.len(), store.len());
    assert!(entries.windows(2).all(|w| w[0].name < w[1].name));
    assert!(entries.iter().any(|e| e.kind == ParamKind::Buffer && e.name.ends_with("running_var")));
    let total: usize = entries.iter().map(|e| e.len).sum();
    assert_eq!(fs::metadata(dir.path().join(BLOB)).unwrap().len() as usize, total);
}

#[test]
fn truncated_blob_names_first_missing_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (model, store) = build_model::<f32>(&small(), 2).unwrap();
    save_checkpoint(dir.path(), &model, &store, &digits()).unwrap();
    let entries = read_manifest(dir.path()).unwrap();
    let victim = &entries[entries.len() / 2];
    let blob = fs::read(dir.path().join(BLOB)).unwrap();
    fs::write(dir.path().join(BLOB), &blob[..victim.offset + 2]).unwrap();
    let err = load_checkpoint(dir.path()).expect_err("truncated blob must fail").to_string();
    assert!(err.contains(&victim.name), "{err}");
}

#[test]
fn corrupted_weights_fail_the_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let (model, store) = build_model::<f32>(&small(), 2).unwrap();
    save_checkpoint(dir.path(), &model, &store, &digits()).unwrap();
    let mut blob = fs::read(dir.path().join(BLOB)).unwrap();
    blob[10] ^= 1;
    fs::write(dir.path().join(BLOB), &blob).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn mismatched_manifest_shape_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (model, store) = build_model::<f32>(&small(), 2).unwrap();
    save_checkpoint(dir.path(), &model, &store, &digits()).unwrap();
    let path = dir.path().join(MANIFEST);
    let text = fs::read_to_string(&path).unwrap();
    let line = text.lines().find(|l| l.contains("head.fc.bias")).unwrap();
    fs::write(&path, text.replace(line, &line.replace("f32 11 ", "f32 12 "))).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn images_load_from_every_supported_format() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(&[3, 16, 40], (0..3 * 16 * 40).map(|i| ((i % 7) as f32 / 3.0) - 1.0).collect()).unwrap();
    let ppm = encode_ppm(&t);
    fs::write(dir.path().join("a.ppm"), &ppm).unwrap();
    let decoded = decode_pnm(&ppm, std::path::Path::new("a.ppm")).unwrap();
    assert_eq!((decoded.channels, decoded.height, decoded.width), (3, 16, 40));
    let a = load_image(&dir.path().join("a.ppm")).unwrap();
    assert_eq!(a.shape(), &[3, 32, 80]);

    fs::write(dir.path().join("b.vten"), encode_raw(&t).unwrap()).unwrap();
    let b = load_image(&dir.path().join("b.vten")).unwrap();
    assert_eq!(b.shape(), &[3, 32, 80]);
    // PPM quantizes to 8 bits.
    assert!(a.max_abs_diff(&b) < 2.0 / 255.0 + 1e-6);

    fs::write(dir.path().join("bad.pgm"), b"P5\n4 4\n255\n\x00").unwrap();
    assert!(load_image(&dir.path().join("bad.pgm")).is_err());
}

#[test]
fn run_config_rejects_unknown_keys_and_bad_heights() {
    assert!(RunConfig::parse(r#"{"learning_rate":1}"#).is_err());
    let c = RunConfig::parse(r#"{"input_height":48}"#).unwrap();
    assert!(c.resolve(None).is_err());
    let c = RunConfig::parse("{}").unwrap().resolve(Some(3)).unwrap();
    assert_eq!(c.seed, 3);
    assert_eq!(c.model.channels, [64, 128, 256, 192]);
}
