//! Per-forward evaluation context.

use std::cell::{RefCell, RefMut};
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Training mode enables dropout and batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Attention weights captured for one head of one block. `map[i]` is the
/// total attention mass token `i` receives from all queries, laid out over
/// the block's `grid` (height, width).
#[derive(Clone, Debug)]
pub struct AttnRecord {
    pub block: String,
    pub head: usize,
    pub grid: (usize, usize),
    pub map: Vec<f64>,
}

/// Everything a forward pass needs besides its input: the tape, frozen
/// parameter values, mode, a seeded RNG for stochastic ops, and side outputs
/// (batch-norm statistic updates, captured attention, warnings).
pub struct Ctx<'t, 's, T: Scalar = f32> {
    pub tape: &'t Tape<T>,
    pub params: &'s ParamStore<T>,
    pub mode: Mode,
    rng: RefCell<ChaCha8Rng>,
    leaves: RefCell<HashMap<ParamId, Var<'t, T>>>,
    stat_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
    attn: Option<RefCell<Vec<AttnRecord>>>,
    warnings: RefCell<Vec<String>>,
}

impl<'t, 's, T: Scalar> Ctx<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, params: &'s ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            tape,
            params,
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            leaves: RefCell::new(HashMap::new()),
            stat_updates: RefCell::new(Vec::new()),
            attn: None,
            warnings: RefCell::new(Vec::new()),
        }
    }

    /// Enables capture of attention maps.
    pub fn with_attention_capture(mut self) -> Self {
        self.attn = Some(RefCell::new(Vec::new()));
        self
    }

    pub fn train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// The tape leaf for a parameter; repeated calls share one leaf.
    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.leaves
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| self.tape.param(self.params.value_arc(id), id))
            .clone()
    }

    pub fn rng(&self) -> RefMut<'_, ChaCha8Rng> {
        self.rng.borrow_mut()
    }

    pub(crate) fn push_stat_update(&self, id: ParamId, value: Tensor<T>) {
        self.stat_updates.borrow_mut().push((id, value));
    }

    /// Running-statistic values produced by training-mode batch norms, to be
    /// written back into the store after the step.
    pub fn take_stat_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.stat_updates.borrow_mut())
    }

    pub fn capturing_attention(&self) -> bool {
        self.attn.is_some()
    }

    pub(crate) fn record_attention(&self, rec: AttnRecord) {
        if let Some(log) = &self.attn {
            log.borrow_mut().push(rec);
        }
    }

    pub fn take_attention(&self) -> Vec<AttnRecord> {
        self.attn
            .as_ref()
            .map(|log| std::mem::take(&mut *log.borrow_mut()))
            .unwrap_or_default()
    }

    pub(crate) fn warn(&self, msg: String) {
        self.warnings.borrow_mut().push(msg);
    }

    pub fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut self.warnings.borrow_mut())
    }
}
