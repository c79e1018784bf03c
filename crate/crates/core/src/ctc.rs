//! CTC: alphabet, greedy transcription, and the alignment loss.

use std::path::Path;

use crate::autograd::Var;
use crate::error::{config_err, Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Index of the blank symbol.
pub const BLANK: usize = 0;

/// Output symbols; class `i + 1` is `symbols[i]`, class 0 is the blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(config_err!("alphabet has no symbols"));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(config_err!("alphabet symbol {} is empty", i + 1));
            }
            if symbols[..i].contains(s) {
                return Err(config_err!("alphabet symbol '{s}' appears twice"));
            }
        }
        Ok(Self { symbols })
    }

    /// Lowercase letters followed by digits: 36 symbols, 37 classes.
    pub fn english() -> Self {
        Self::new(('a'..='z').chain('0'..='9').map(String::from)).expect("valid")
    }

    /// One symbol per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_contents(&self) -> String {
        self.symbols.iter().map(|s| format!("{s}\n")).collect()
    }

    /// Number of classes including the blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Class indices of a label. Matching is greedy, longest symbol first.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let best = self
                .symbols
                .iter()
                .enumerate()
                .filter(|(_, s)| rest.starts_with(s.as_str()))
                .max_by_key(|(_, s)| s.len())
                .ok_or_else(|| config_err!("label '{text}' has a character outside the alphabet at '{rest}'"))?;
            out.push(best.0 + 1);
            rest = &rest[best.1.len()..];
        }
        Ok(out)
    }

    pub fn decode(&self, classes: &[usize]) -> String {
        classes
            .iter()
            .filter(|&&c| c != BLANK)
            .map(|&c| self.symbols[c - 1].as_str())
            .collect()
    }
}

/// Collapses repeats, then drops blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != BLANK {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Best-path decode of `[T, N]` scores for one item.
pub fn greedy_path<T: Scalar>(scores: &[T], n: usize) -> Vec<usize> {
    scores
        .chunks_exact(n)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

/// Greedy transcription of each item of `[B, T, N]` logits.
pub fn greedy_decode<T: Scalar>(logits: &Tensor<T>, alphabet: &Alphabet) -> Result<Vec<String>> {
    let s = logits.shape();
    if s.len() != 3 || s[2] != alphabet.num_classes() {
        return Err(config_err!(
            "logits {s:?} do not match an alphabet of {} classes",
            alphabet.num_classes()
        ));
    }
    let per = s[1] * s[2];
    Ok(logits
        .data()
        .chunks_exact(per)
        .map(|item| alphabet.decode(&collapse(&greedy_path(item, s[2]))))
        .collect())
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum frames needed to emit `target`: one per symbol plus one blank
/// between each pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|p| p[0] == p[1]).count()
}

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// `log_probs` (`[T, N]`, row-major), and its gradient with respect to
/// `log_probs`.
///
/// Each entry is treated as an independent input, so gradient entry
/// `(t, k)` is minus the posterior probability that frame `t` emits class
/// `k` on a path to `target`.
pub fn ctc_loss(log_probs: &[f64], t_len: usize, n: usize, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    if log_probs.len() != t_len * n || t_len == 0 {
        return Err(config_err!("log_probs of length {} is not {t_len}x{n}", log_probs.len()));
    }
    if let Some(&bad) = target.iter().find(|&&c| c == BLANK || c >= n) {
        return Err(config_err!("target class {bad} is blank or out of range for {n} classes"));
    }
    if min_frames(target) > t_len {
        return Err(Error::InfeasibleTarget(format!(
            "target of length {} needs at least {} frames, got {t_len}",
            target.len(),
            min_frames(target)
        )));
    }
    let s_len = 2 * target.len() + 1;
    let label = |s: usize| if s.is_multiple_of(2) { BLANK } else { target[s / 2] };
    let lp = |t: usize, k: usize| log_probs[t * n + k];
    let ninf = f64::NEG_INFINITY;
    let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, label(0));
    if s_len > 1 {
        alpha[1] = lp(0, label(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            if a > ninf {
                alpha[t * s_len + s] = a + lp(t, label(s));
            }
        }
    }
    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, label(s_len - 1));
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, label(s_len - 2));
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_add(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, beta[(t + 1) * s_len + s + 2]);
            }
            if b > ninf {
                beta[t * s_len + s] = b + lp(t, label(s));
            }
        }
    }
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(Error::InfeasibleTarget("no alignment has non-zero probability".into()));
    }
    // α and β both include lp(t, label(s)), so α+β−lp is the log mass of
    // paths through (t, s).
    let mut grad = vec![0.0; t_len * n];
    for t in 0..t_len {
        let mut acc = vec![ninf; n];
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            if v > ninf {
                let k = label(s);
                acc[k] = log_add(acc[k], v - lp(t, k));
            }
        }
        for k in 0..n {
            if acc[k] > ninf {
                grad[t * n + k] = -(acc[k] - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// Exhaustive reference: sums the probability of every length-`T` path that
/// collapses to `target`. Limited to `N^T ≤ 5^6`.
pub fn ctc_brute_force(log_probs: &[f64], t_len: usize, n: usize, target: &[usize]) -> Result<f64> {
    if t_len > 6 || n > 5 || t_len == 0 || log_probs.len() != t_len * n {
        return Err(config_err!("brute-force CTC limited to 1<=T<=6, N<=5, got T={t_len}, N={n}"));
    }
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    loop {
        if collapse(&path) == target {
            total += path.iter().enumerate().map(|(t, &k)| log_probs[t * n + k]).sum::<f64>().exp();
        }
        // Odometer increment.
        let mut i = t_len;
        loop {
            if i == 0 {
                return Ok(-total.ln());
            }
            i -= 1;
            path[i] += 1;
            if path[i] < n {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Mean CTC loss over a batch of `[B, T, N]` logits (log-softmax applied
/// here), differentiable with respect to the logits.
pub fn ctc_loss_batch<'t, T: Scalar>(logits: &Var<'t, T>, targets: &[Vec<usize>]) -> Result<Var<'t, T>> {
    let s = logits.shape().to_vec();
    if s.len() != 3 || s[0] != targets.len() {
        return Err(config_err!("logits {s:?} do not match {} targets", targets.len()));
    }
    let (b, t_len, n) = (s[0], s[1], s[2]);
    let log_probs = ops::log_softmax_lastdim(logits);
    let lp = log_probs.value().to_f64_vec();
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(lp.len());
    for (i, target) in targets.iter().enumerate() {
        let (loss, g) = ctc_loss(&lp[i * t_len * n..(i + 1) * t_len * n], t_len, n, target)?;
        total += loss;
        grad.extend(g);
    }
    let inv_b = 1.0 / b as f64;
    let grad = Tensor::<T>::new(&s, grad.into_iter().map(|g| T::from_f64_lossy(g * inv_b)).collect())?;
    let out = Tensor::scalar(T::from_f64_lossy(total * inv_b));
    Ok(log_probs.tape().record(out, &[&log_probs], move |g, _| {
        let mut d = grad;
        d.scale_assign(g.item());
        Ok(vec![Some(d)])
    }))
}
