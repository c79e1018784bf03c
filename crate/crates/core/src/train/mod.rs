//! Optimization: AdamW, the learning-rate schedule, the synthetic glyph
//! corpus, and the training and evaluation loops.

mod optim;
mod run;
mod synth;

pub use optim::{adamw_step, clip_grad_norm, cosine_lr, decays, AdamState, OptimHyper};
pub use run::{evaluate, mix_seed, train, train_with, transcribe, word_accuracy, EpochMetrics, TrainConfig, TrainOutcome};
pub use synth::{render, synth_sample, GlyphBank, SynthSet, SynthSpec, GLYPH, IMAGE_HEIGHT};
