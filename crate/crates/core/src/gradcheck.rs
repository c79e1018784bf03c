//! Central finite-difference gradient checking in 64-bit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::ctx::{Ctx, Mode};
use crate::error::Result;
use crate::ops;
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Tensor and coordinate where it occurred.
    pub worst: String,
    pub coords_checked: usize,
}

/// Relative error with a floor of `1e-3 · scale` in the denominator, so that
/// coordinates whose true gradient is ~0 are judged against the magnitude of
/// the gradient as a whole.
fn rel_err(a: f64, n: f64, scale: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-3 * scale).max(1e-12);
    (a - n).abs() / denom
}

/// Checks `f` at `x` and returns the maximum relative error between the
/// analytic gradient and central differences `(f(x+εe)−f(x−εe))/2ε`.
/// `f` must return a one-element tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'a> Fn(&Var<'a, f64>) -> Result<Var<'a, f64>>,
{
    let tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = f(&xv)?;
    let grads = tape.backward(&y)?;
    let analytic = grads.wrt(&xv).cloned().unwrap_or_else(|| x.zeros_like());
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let tape = Tape::inference();
        Ok(f(&tape.input(t))?.value().item())
    };
    let scale = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i], numeric, scale));
    }
    Ok(worst)
}

/// Options for [`check_gradients`].
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    /// Upper bound on coordinates probed per tensor; `None` probes all.
    pub max_coords_per_tensor: Option<usize>,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords_per_tensor: None,
            mode: Mode::Eval,
            seed: 0,
        }
    }
}

/// Gradient check of a parameterized function with respect to both its
/// inputs and every trainable parameter in `store`.
///
/// Non-scalar outputs are reduced by a dot product with fixed pseudo-random
/// weights so that every output coordinate contributes distinctly.
pub fn check_gradients<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], opts: &CheckOptions, f: F) -> Result<GradReport>
where
    F: for<'t, 's> Fn(&Ctx<'t, 's, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let forward = |tape: &Tape<f64>, store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let ctx = Ctx::new(tape, store, opts.mode, opts.seed);
        let vars: Vec<_> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        Ok(f(&ctx, &vars)?.value().clone())
    };

    // Analytic pass.
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, opts.mode, opts.seed);
    let vars: Vec<_> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let y = f(&ctx, &vars)?;
    let weights = Tensor::<f64>::uniform(y.shape(), -1.0, 1.0, &mut rng);
    let loss = ops::sum(&ops::mul(&y, &tape.constant(weights.clone()))?);
    let grads = tape.backward(&loss)?;
    let reduce = |t: &Tensor<f64>| -> f64 { t.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum() };

    let mut param_grads: Vec<Tensor<f64>> = store.ids().map(|id| store.value(id).zeros_like()).collect();
    for (id, g) in grads.param_grads() {
        param_grads[id.index()].add_assign(g);
    }
    let input_grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(v).cloned().unwrap_or_else(|| t.zeros_like()))
        .collect();
    let scale = param_grads
        .iter()
        .chain(&input_grads)
        .flat_map(|g| g.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));

    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match opts.max_coords_per_tensor {
            Some(k) if k < n => {
                let mut v = sample(rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        }
    };

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        coords_checked: 0,
    };
    let note = |name: &str, i: usize, a: f64, n: f64, report: &mut GradReport| {
        let e = rel_err(a, n, scale);
        report.coords_checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e.max(report.max_rel_err);
            report.worst = format!("{name}[{i}] analytic={a:.6e} numeric={n:.6e}");
        }
    };

    let eps = opts.eps;
    for (k, x) in inputs.iter().enumerate() {
        for i in pick(x.numel(), &mut rng) {
            let mut probe = inputs.to_vec();
            probe[k].data_mut()[i] += eps;
            let fp = reduce(&forward(&Tape::inference(), store, &probe)?);
            probe[k].data_mut()[i] -= 2.0 * eps;
            let fm = reduce(&forward(&Tape::inference(), store, &probe)?);
            note(&format!("input{k}"), i, input_grads[k].data()[i], (fp - fm) / (2.0 * eps), &mut report);
        }
    }
    let mut probe_store = store.clone();
    for id in store.ids() {
        let p = store.get(id);
        if p.kind != ParamKind::Weight {
            continue;
        }
        for i in pick(p.numel(), &mut rng) {
            let orig = store.value(id).data()[i];
            probe_store.value_mut(id).data_mut()[i] = orig + eps;
            let fp = reduce(&forward(&Tape::inference(), &probe_store, inputs)?);
            probe_store.value_mut(id).data_mut()[i] = orig - eps;
            let fm = reduce(&forward(&Tape::inference(), &probe_store, inputs)?);
            probe_store.value_mut(id).data_mut()[i] = orig;
            note(&p.name, i, param_grads[id.index()].data()[i], (fp - fm) / (2.0 * eps), &mut report);
        }
    }
    Ok(report)
}
