//! Caption metrics: BLEU, ROUGE-L and CIDEr-D, plus the metric
//! specifications used to score caption difficulty.

mod bleu;
mod cider;
mod rouge;
mod spec;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu, corpus_bleu, BleuOptions};
pub use cider::{cider, CiderScores, CorpusStats, CIDER_SIGMA};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};
pub use spec::MetricSpec;

use crate::error::Result;

/// Lowercases, replaces punctuation with spaces and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars().map(|c| if c.is_ascii_punctuation() { ' ' } else { c }).collect::<String>().to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// Multiset of the `n`-grams in `tokens`.
pub(crate) fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

/// Corpus-level scores reported for a set of generated captions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
}

impl CaptionScores {
    pub const HEADER: [&'static str; 6] = ["bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider"];

    pub fn values(&self) -> [f64; 6] {
        [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l, self.cider]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        CaptionScores { bleu1: v[0], bleu2: v[1], bleu3: v[2], bleu4: v[3], rouge_l: v[4], cider: v[5] }
    }
}

/// Corpus BLEU-1..4, mean sentence ROUGE-L and mean CIDEr-D. CIDEr is
/// reported as NaN for a single-image corpus.
pub fn evaluate_corpus(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], opts: BleuOptions) -> Result<CaptionScores> {
    let mut b = [0.0; 4];
    for (n, slot) in b.iter_mut().enumerate() {
        *slot = corpus_bleu(candidates, references, n + 1, opts)?;
    }
    let rouge = if candidates.is_empty() { 0.0 } else { candidates.iter().zip(references).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / candidates.len() as f64 };
    let cider_mean = if references.len() >= 2 { cider(candidates, references)?.mean } else { f64::NAN };
    Ok(CaptionScores { bleu1: b[0], bleu2: b[1], bleu3: b[2], bleu4: b[3], rouge_l: rouge, cider: cider_mean })
}

/// Sentence-level scores for each image.
pub fn evaluate_per_image(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], opts: BleuOptions) -> Result<Vec<CaptionScores>> {
    let ciders = if references.len() >= 2 { cider(candidates, references)?.per_image } else { vec![f64::NAN; candidates.len()] };
    candidates
        .iter()
        .zip(references)
        .zip(ciders)
        .map(|((c, r), cd)| {
            let mut b = [0.0; 4];
            for (n, slot) in b.iter_mut().enumerate() {
                *slot = bleu(c, r, n + 1, opts)?;
            }
            Ok(CaptionScores { bleu1: b[0], bleu2: b[1], bleu3: b[2], bleu4: b[3], rouge_l: rouge_l(c, r), cider: cd })
        })
        .collect()
}
