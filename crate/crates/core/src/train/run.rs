//! The training loop and exact-match evaluation.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape};
use crate::backbone::{build_model, Model, VariantConfig};
use crate::ctc::{ctc_loss_batch, greedy_decode, Alphabet};
use crate::ctx::{Ctx, Mode};
use crate::error::{config_err, Error, Result};
use crate::io::save_checkpoint;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

use super::optim::{adamw_step, clip_grad_norm, cosine_lr, AdamState, OptimHyper};
use super::synth::{SynthSet, SynthSpec};

/// Everything a training run depends on.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: VariantConfig,
    pub alphabet: Alphabet,
    pub synth: SynthSpec,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Reshuffle the training order every epoch.
    pub shuffle: bool,
    pub hyper: OptimHyper,
    pub seed: u64,
    /// End the run early once held-out accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
    /// Where the best checkpoint and the metrics log are written.
    pub out_dir: Option<PathBuf>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub word_acc: f64,
    pub lr: f64,
}

impl EpochMetrics {
    /// `epoch,loss,word_acc,lr` with fixed, locale-independent formatting.
    pub fn line(&self) -> String {
        format!("{},{:.6},{:.4},{:.6e}", self.epoch, self.loss, self.word_acc, self.lr)
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub best_accuracy: f64,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const EVAL_BATCH: usize = 64;

/// Fraction of predictions equal to their label.
pub fn word_accuracy(predicted: &[String], labels: &[String]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Greedy transcriptions of a batch of `[B, 3, 32, W]` images in eval mode.
pub fn transcribe(model: &Model, store: &ParamStore<f32>, alphabet: &Alphabet, images: Tensor<f32>) -> Result<Vec<String>> {
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, store, Mode::Eval, 0);
    let x = tape.constant(images);
    let logits = model.logits(&ctx, &x)?;
    greedy_decode(logits.value(), alphabet)
}

/// Exact-match word accuracy over a synthetic set.
pub fn evaluate(model: &Model, store: &ParamStore<f32>, set: &SynthSet) -> Result<f64> {
    let mut predicted = Vec::with_capacity(set.len);
    let mut labels = Vec::with_capacity(set.len);
    let indices: Vec<usize> = (0..set.len).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, l) = set.batch(chunk);
        predicted.extend(transcribe(model, store, &set.alphabet, x)?);
        labels.extend(l);
    }
    Ok(word_accuracy(&predicted, &labels))
}

struct StepResult {
    loss: f64,
    grads: Gradients<f32>,
    stats: Vec<(ParamId, Tensor<f32>)>,
}

fn forward_backward(
    model: &Model,
    store: &ParamStore<f32>,
    images: Tensor<f32>,
    targets: &[Vec<usize>],
    seed: u64,
) -> Result<StepResult> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, Mode::Train, seed);
    let x = tape.constant(images);
    let logits = model.logits(&ctx, &x)?;
    let loss = ctc_loss_batch(&logits, targets)?;
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite { layer: "ctc loss".into() });
    }
    let grads = tape.backward(&loss)?;
    Ok(StepResult { loss: value, grads, stats: ctx.take_stat_updates() })
}

/// Trains a freshly initialized model on the synthetic corpus. Each epoch
/// appends one metrics line; the best checkpoint so far is kept in
/// `out_dir/best`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    cfg.hyper.validate()?;
    if cfg.model.num_classes != cfg.alphabet.num_classes() {
        return Err(config_err!(
            "model has {} classes but the alphabet defines {}",
            cfg.model.num_classes,
            cfg.alphabet.num_classes()
        ));
    }
    if cfg.train_samples == 0 || cfg.val_samples == 0 {
        return Err(config_err!("train and validation sets must be non-empty"));
    }
    let (model, mut store) = build_model::<f32>(&cfg.model, cfg.seed)?;
    let train_set = SynthSet::new(&cfg.synth, &cfg.alphabet, mix_seed(cfg.seed, 1), cfg.train_samples)?;
    let val_set = SynthSet::new(&cfg.synth, &cfg.alphabet, mix_seed(cfg.seed, 2), cfg.val_samples)?;
    let mut log = match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.log");
            Some((OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };

    let h = &cfg.hyper;
    let steps_per_epoch = cfg.train_samples.div_ceil(h.batch_size);
    let total = steps_per_epoch * h.epochs;
    let warmup = steps_per_epoch * h.warmup_epochs;
    let mut adam = AdamState::new(&store);
    let mut order: Vec<usize> = (0..cfg.train_samples).collect();
    let mut metrics = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut step = 0;
    for epoch in 0..h.epochs {
        if cfg.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1000 + epoch as u64)));
        }
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(h.batch_size) {
            lr = cosine_lr(step, total, warmup, h.lr);
            let (x, labels) = train_set.batch(chunk);
            let targets = labels
                .iter()
                .map(|l| cfg.alphabet.encode(l))
                .collect::<Result<Vec<_>>>()?;
            let r = forward_backward(&model, &store, x, &targets, mix_seed(cfg.seed, (1 << 32) + step as u64))
                .map_err(|e| match e {
                    Error::NonFinite { layer } => Error::NonFinite {
                        layer: format!("{layer} (epoch {}, step {step}, lr {lr:e})", epoch + 1),
                    },
                    e => e,
                })?;
            loss_sum += r.loss * chunk.len() as f64;
            r.grads.accumulate_into(&mut store);
            if let Some(c) = h.grad_clip {
                clip_grad_norm(&mut store, c);
            }
            adamw_step(&mut store, &mut adam, h, lr);
            for (id, v) in r.stats {
                store.set_value(id, v)?;
            }
            store.zero_grad();
            step += 1;
        }
        let word_acc = evaluate(&model, &store, &val_set)?;
        let m = EpochMetrics { epoch: epoch + 1, loss: loss_sum / cfg.train_samples as f64, word_acc, lr };
        if let Some((file, path)) = &mut log {
            writeln!(file, "{}", m.line()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        if word_acc > best {
            best = word_acc;
            if let Some(dir) = &cfg.out_dir {
                save_checkpoint(&dir.join("best"), &model, &store, &cfg.alphabet)?;
            }
        }
        on_epoch(&m);
        metrics.push(m);
        if cfg.stop_at_accuracy.is_some_and(|t| word_acc >= t) {
            break;
        }
    }
    Ok(TrainOutcome { metrics, model, store, best_accuracy: best })
}
