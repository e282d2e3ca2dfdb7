//! Greedy and beam-search decoding over any next-token scorer.

use serde::{Deserialize, Serialize};

use crate::data::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Source of next-token log-probabilities for a prefix that starts with
/// `<bos>`.
pub trait StepScorer {
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

impl<F: FnMut(&[usize]) -> Result<Vec<f64>>> StepScorer for F {
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        self(prefix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionState {
    /// Emitted ids, beginning with `<bos>`.
    pub tokens: Vec<usize>,
    /// Log-probability of each token after `<bos>`.
    pub log_probs: Vec<f64>,
    pub finished: bool,
}

impl CaptionState {
    pub fn start() -> Self {
        CaptionState { tokens: vec![BOS], log_probs: Vec::new(), finished: false }
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Cumulative log-probability divided by `len^alpha`.
    pub fn score(&self, alpha: f64) -> f64 {
        let total = self.total_log_prob();
        if alpha == 0.0 || self.log_probs.is_empty() {
            total
        } else {
            total / (self.log_probs.len() as f64).powf(alpha)
        }
    }

    /// Generated ids without `<bos>` and the trailing `<eos>`.
    pub fn body(&self) -> &[usize] {
        let end = if self.tokens.last() == Some(&EOS) { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1.min(end)..end]
    }

    fn extend(&self, token: usize, lp: f64, max_len: usize) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let mut log_probs = self.log_probs.clone();
        log_probs.push(lp);
        let finished = token == EOS || tokens.len() >= max_len;
        CaptionState { tokens, log_probs, finished }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    pub beam_width: usize,
    /// Upper bound on the length of the token sequence, `<bos>` included.
    pub max_len: usize,
    pub length_alpha: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { beam_width: 1, max_len: 20, length_alpha: 0.0 }
    }
}

fn selectable(token: usize) -> bool {
    token != PAD && token != BOS
}

fn checked(lp: Vec<f64>) -> Result<Vec<f64>> {
    if lp.len() <= EOS {
        return Err(Error::shape("generate", format!("scorer returned {} log-probabilities", lp.len())));
    }
    if lp.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("generate: scorer log-probabilities"));
    }
    Ok(lp)
}

/// Per-step argmax; ties resolve to the lowest id.
pub fn greedy<S: StepScorer + ?Sized>(scorer: &mut S, max_len: usize) -> Result<CaptionState> {
    let mut state = CaptionState::start();
    if max_len <= 1 {
        state.finished = true;
        return Ok(state);
    }
    while !state.finished {
        let lp = checked(scorer.next_log_probs(&state.tokens)?)?;
        let (tok, &best) = lp
            .iter()
            .enumerate()
            .filter(|&(t, _)| selectable(t))
            .fold(None, |acc: Option<(usize, &f64)>, (t, v)| match acc {
                Some((_, b)) if *b >= *v => acc,
                _ => Some((t, v)),
            })
            .expect("vocabulary has selectable tokens");
        state = state.extend(tok, best, max_len);
    }
    Ok(state)
}

/// Beam search over cumulative (optionally length-normalised) log-probability.
/// All candidates, finished or not, compete for the `beam_width` slots at
/// each step, so width 1 coincides with [`greedy`].
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &mut S, opts: &DecodeOptions) -> Result<CaptionState> {
    let width = opts.beam_width.max(1);
    let alpha = opts.length_alpha;
    if opts.max_len <= 1 {
        return greedy(scorer, opts.max_len);
    }
    let mut live = vec![CaptionState::start()];
    let mut finished: Vec<CaptionState> = Vec::new();
    let order = |a: &CaptionState, b: &CaptionState| b.score(alpha).total_cmp(&a.score(alpha)).then_with(|| a.tokens.cmp(&b.tokens));
    while !live.is_empty() {
        let mut candidates = Vec::new();
        for hyp in &live {
            let lp = checked(scorer.next_log_probs(&hyp.tokens)?)?;
            let mut toks: Vec<usize> = (0..lp.len()).filter(|&t| selectable(t)).collect();
            toks.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            toks.truncate(width);
            candidates.extend(toks.into_iter().map(|t| hyp.extend(t, lp[t], opts.max_len)));
        }
        candidates.sort_by(order);
        candidates.truncate(width);
        live.clear();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        // Without length normalisation scores only fall as hypotheses grow.
        if alpha == 0.0 {
            let best_done = finished.iter().map(|c| c.score(0.0)).fold(f64::NEG_INFINITY, f64::max);
            live.retain(|c| c.score(0.0) > best_done);
        }
    }
    finished.sort_by(order);
    Ok(finished.into_iter().next().expect("at least one hypothesis finishes"))
}

/// Beam search, or greedy decoding when the width is 1.
pub fn generate<S: StepScorer + ?Sized>(scorer: &mut S, opts: &DecodeOptions) -> Result<CaptionState> {
    if opts.beam_width <= 1 {
        greedy(scorer, opts.max_len)
    } else {
        beam_search(scorer, opts)
    }
}

/// Log-softmax of one row in double precision.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}
