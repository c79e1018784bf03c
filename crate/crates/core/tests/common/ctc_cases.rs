use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viptr::ctc::{ctc_brute_force, ctc_loss, min_frames};

pub struct Instance {
    pub t: usize,
    pub n: usize,
    pub log_probs: Vec<f64>,
    pub target: Vec<usize>,
}

pub fn random_log_probs(t: usize, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(t * n);
    for _ in 0..t {
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        out.extend(logits.iter().map(|v| v - lse));
    }
    out
}

/// Feasible random instances with T ≤ 6, L ≤ 3, N ≤ 5.
pub fn instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let t = rng.random_range(1..=6);
        let n = rng.random_range(2..=5);
        let l = rng.random_range(0..=3);
        let target: Vec<usize> = (0..l).map(|_| rng.random_range(1..n)).collect();
        if min_frames(&target) > t {
            continue;
        }
        let log_probs = random_log_probs(t, n, &mut rng);
        out.push(Instance { t, n, log_probs, target });
    }
    out
}

/// Absolute gap between the dynamic program and path enumeration.
pub fn enumeration_gap(c: &Instance) -> f64 {
    let (dp, _) = ctc_loss(&c.log_probs, c.t, c.n, &c.target).unwrap();
    let bf = ctc_brute_force(&c.log_probs, c.t, c.n, &c.target).unwrap();
    (dp - bf).abs()
}

/// Largest relative error of the analytic gradient against central
/// differences, with a floor of `1e-3 · max|grad|`.
pub fn gradient_error(c: &Instance) -> f64 {
    let eps = 1e-6;
    let loss = |lp: &[f64]| ctc_loss(lp, c.t, c.n, &c.target).unwrap().0;
    let (_, grad) = ctc_loss(&c.log_probs, c.t, c.n, &c.target).unwrap();
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    for i in 0..c.log_probs.len() {
        let mut plus = c.log_probs.clone();
        plus[i] += eps;
        let mut minus = c.log_probs.clone();
        minus[i] -= eps;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-3 * scale).max(1e-12);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}
