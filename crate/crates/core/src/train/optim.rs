//! AdamW with decoupled weight decay, and the warm-up + cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            eps: 1e-8,
            warmup_epochs: 2,
            epochs: 30,
            batch_size: 32,
            grad_clip: Some(5.0),
        }
    }
}

impl OptimHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(config_err!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if self.warmup_epochs > self.epochs {
            return Err(config_err!("warm-up of {} epochs exceeds {} total", self.warmup_epochs, self.epochs));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs and batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(config_err!("betas must lie in [0, 1)"));
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0) {
            return Err(config_err!("gradient clip must be positive"));
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `lr_base` over `warmup_steps`, then cosine
/// annealing to 0 at `steps_total`.
pub fn cosine_lr(step: usize, steps_total: usize, warmup_steps: usize, lr_base: f64) -> f64 {
    if step < warmup_steps {
        return lr_base * step as f64 / warmup_steps as f64;
    }
    let span = steps_total.saturating_sub(warmup_steps).max(1);
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    lr_base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Whether weight decay applies to a parameter: matrices and kernels do;
/// biases, norm affines and the position table do not.
pub fn decays(name: &str, shape: &[usize]) -> bool {
    shape.len() > 1 && name != "ape"
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.ids().map(|id| store.value(id).zeros_like()).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// One AdamW update of every trainable parameter from its stored gradient.
pub fn adamw_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>, hyper: &OptimHyper, lr: f64) {
    state.step += 1;
    let (b1, b2) = hyper.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get(id);
        if p.kind != ParamKind::Weight {
            continue;
        }
        let decay = if decays(&p.name, p.value().shape()) { lr * hyper.weight_decay } else { 0.0 };
        let g = p.grad().clone();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let theta = store.value_mut(id).data_mut();
        for i in 0..theta.len() {
            let gi = g.data()[i].to_f64_lossy();
            let mi = b1 * m[i].to_f64_lossy() + (1.0 - b1) * gi;
            let vi = b2 * v[i].to_f64_lossy() + (1.0 - b2) * gi * gi;
            m[i] = T::from_f64_lossy(mi);
            v[i] = T::from_f64_lossy(vi);
            let th = theta[i].to_f64_lossy();
            let update = (mi / c1) / ((vi / c2).sqrt() + hyper.eps);
            theta[i] = T::from_f64_lossy(th - decay * th - lr * update);
        }
    }
}

/// Scales all weight gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Weight)
        .flat_map(|(_, p)| p.grad().data().iter())
        .map(|g| g.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.grad_mut(id).scale_assign(s);
        }
    }
    norm
}
