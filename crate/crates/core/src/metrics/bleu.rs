use serde::{Deserialize, Serialize};

use super::ngram_counts;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuOptions {
    /// Add one to numerator and denominator of the 2..n-gram precisions.
    pub smoothing: bool,
}

fn check_order(n: usize) -> Result<()> {
    if (1..=4).contains(&n) {
        Ok(())
    } else {
        Err(Error::Metric(format!("BLEU order {n} outside 1..=4")))
    }
}

/// Clipped matches and candidate n-gram total for one order.
fn clipped<S: AsRef<str>>(cand: &[S], refs: &[Vec<S>], n: usize) -> (usize, usize) {
    let counts = ngram_counts(cand, n);
    let total = cand.len().saturating_sub(n - 1);
    let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
    let matched = counts
        .iter()
        .map(|(g, &c)| {
            let cap = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            c.min(cap)
        })
        .sum();
    (matched, total)
}

/// Reference length closest to `c`, the shorter one on ties.
fn closest_ref_len<S>(c: usize, refs: &[Vec<S>]) -> usize {
    refs.iter().map(|r| r.len()).min_by_key(|&l| (l.abs_diff(c), l)).unwrap_or(0)
}

fn combine(stats: &[(usize, usize)], c: usize, r: usize, opts: BleuOptions) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let n = stats.len() as f64;
    let mut log_sum = 0.0;
    for (k, &(m, t)) in stats.iter().enumerate() {
        let (m, t) = if opts.smoothing && k > 0 { (m + 1, t + 1) } else { (m, t) };
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln() / n;
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

/// Sentence BLEU-`n` against any number of references.
pub fn bleu<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], n: usize, opts: BleuOptions) -> Result<f64> {
    check_order(n)?;
    let stats: Vec<_> = (1..=n).map(|k| clipped(candidate, references, k)).collect();
    Ok(combine(&stats, candidate.len(), closest_ref_len(candidate.len(), references), opts))
}

/// Corpus BLEU-`n`: clipped counts, candidate lengths and reference lengths
/// are summed over the corpus before combining.
pub fn corpus_bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>], n: usize, opts: BleuOptions) -> Result<f64> {
    check_order(n)?;
    if candidates.len() != references.len() {
        return Err(Error::Metric(format!("{} candidates for {} reference sets", candidates.len(), references.len())));
    }
    let mut stats = vec![(0, 0); n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in candidates.iter().zip(references) {
        for (k, slot) in stats.iter_mut().enumerate() {
            let (m, t) = clipped(cand, refs, k + 1);
            slot.0 += m;
            slot.1 += t;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    Ok(combine(&stats, c, r, opts))
}
