//! Inference latency measurement across model variants.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::backbone::{build_model, Model, VariantConfig};
use crate::ctx::{Ctx, Mode};
use crate::error::{config_err, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub width: usize,
    pub height: usize,
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { width: 96, height: 32, batch: 4, warmup: 5, iters: 20, seed: 0 }
    }
}

/// Per-image wall time of one variant, in milliseconds.
#[derive(Clone, Debug)]
pub struct BenchStats {
    pub name: String,
    pub samples: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
}

impl BenchStats {
    fn from_samples(name: String, mut samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        samples.shrink_to_fit();
        Self { name, samples, mean_ms: mean, median_ms: median, std_ms: var.sqrt() }
    }
}

struct Candidate {
    name: String,
    model: Model,
    store: ParamStore<f32>,
}

fn time_forward(c: &Candidate, input: &Tensor<f32>) -> Result<f64> {
    let start = Instant::now();
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &c.store, Mode::Eval, 0);
    let x = tape.constant(input.clone());
    let y = c.model.logits(&ctx, &x)?;
    std::hint::black_box(y.value());
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Times eval-mode forward passes of every variant. Variants are
/// interleaved round-robin, with the starting variant rotating each round,
/// so drift in machine load affects all of them alike.
pub fn bench_variants(variants: &[(String, VariantConfig)], opts: &BenchOptions) -> Result<Vec<BenchStats>> {
    if opts.iters == 0 || opts.batch == 0 {
        return Err(config_err!("bench needs at least one iteration and a positive batch"));
    }
    let candidates = variants
        .iter()
        .map(|(name, cfg)| {
            let (model, store) = build_model::<f32>(cfg, opts.seed)?;
            Ok(Candidate { name: name.clone(), model, store })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let input = Tensor::uniform(&[opts.batch, 3, opts.height, opts.width], -1.0, 1.0, &mut rng);
    let n = candidates.len();
    let mut samples = vec![Vec::with_capacity(opts.iters); n];
    for round in 0..opts.warmup + opts.iters {
        for k in 0..n {
            let i = (round + k) % n;
            let ms = time_forward(&candidates[i], &input)?;
            if round >= opts.warmup {
                samples[i].push(ms / opts.batch as f64);
            }
        }
    }
    Ok(candidates
        .into_iter()
        .zip(samples)
        .map(|(c, s)| BenchStats::from_samples(c.name, s))
        .collect())
}

/// Names ordered from fastest to slowest median time.
pub fn ordering(stats: &[BenchStats]) -> Vec<&str> {
    let mut v: Vec<&BenchStats> = stats.iter().collect();
    v.sort_by(|a, b| a.median_ms.total_cmp(&b.median_ms));
    v.into_iter().map(|s| s.name.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let s = BenchStats::from_samples("x".into(), vec![1.0, 3.0, 2.0, 6.0]);
        assert_eq!(s.mean_ms, 3.0);
        assert_eq!(s.median_ms, 2.5);
        assert!((s.std_ms - 3.5f64.sqrt()).abs() < 1e-12);
        let one = BenchStats::from_samples("y".into(), vec![4.0]);
        assert_eq!((one.mean_ms, one.median_ms, one.std_ms), (4.0, 4.0, 0.0));
    }
}
