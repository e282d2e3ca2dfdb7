use std::collections::{HashMap, HashSet};

use super::ngram_counts;
use crate::error::{Error, Result};

/// Width of the Gaussian length penalty.
pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

/// Document frequencies of reference n-grams, one image per document.
#[derive(Clone, Debug)]
pub struct CorpusStats {
    df: Vec<HashMap<Vec<String>, usize>>,
    num_images: usize,
}

impl CorpusStats {
    pub fn new<S: AsRef<str>>(references: &[Vec<Vec<S>>]) -> Result<Self> {
        if references.len() < 2 {
            return Err(Error::Metric("CIDEr needs a corpus of at least two images; use BLEU for a single image".into()));
        }
        let mut df = vec![HashMap::new(); MAX_N];
        for refs in references {
            for (n, table) in df.iter_mut().enumerate() {
                let seen: HashSet<Vec<&str>> = refs.iter().flat_map(|r| ngram_counts(r, n + 1).into_keys()).collect();
                for g in seen {
                    *table.entry(g.into_iter().map(str::to_string).collect()).or_insert(0) += 1;
                }
            }
        }
        Ok(CorpusStats { df, num_images: references.len() })
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn df<S: AsRef<str>>(&self, gram: &[S]) -> usize {
        let key: Vec<String> = gram.iter().map(|s| s.as_ref().to_string()).collect();
        self.df.get(gram.len().wrapping_sub(1)).and_then(|t| t.get(&key)).copied().unwrap_or(0)
    }

    fn idf(&self, n: usize, gram: &[&str]) -> f64 {
        let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
        let df = self.df[n - 1].get(&key).copied().unwrap_or(0).max(1);
        (self.num_images as f64 / df as f64).ln()
    }

    /// tf-idf weights and their Euclidean norm for each order.
    fn vectors<'s, S: AsRef<str>>(&self, tokens: &'s [S]) -> Vec<(HashMap<Vec<&'s str>, f64>, f64)> {
        (1..=MAX_N)
            .map(|n| {
                let v: HashMap<_, f64> = ngram_counts(tokens, n)
                    .into_iter()
                    .map(|(g, c)| {
                        let w = c as f64 * self.idf(n, &g);
                        (g, w)
                    })
                    .collect();
                let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
                (v, norm)
            })
            .collect()
    }

    /// CIDEr-D of one candidate against its references.
    pub fn score<S: AsRef<str>>(&self, candidate: &[S], references: &[Vec<S>]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let cv = self.vectors(candidate);
        let mut total = 0.0;
        for r in references {
            let rv = self.vectors(r);
            let delta = candidate.len() as f64 - r.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut per_n = 0.0;
            for ((c, cn), (rr, rn)) in cv.iter().zip(&rv) {
                let dot: f64 = c.iter().map(|(g, &wc)| rr.get(g).map_or(0.0, |&wr| wc.min(wr) * wr)).sum();
                if *cn != 0.0 && *rn != 0.0 {
                    per_n += dot / (cn * rn) * penalty;
                }
            }
            total += per_n / MAX_N as f64;
        }
        10.0 * total / references.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiderScores {
    pub per_image: Vec<f64>,
    pub mean: f64,
}

/// CIDEr-D for every image of an aligned candidate/reference corpus.
pub fn cider<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<CiderScores> {
    if candidates.len() != references.len() {
        return Err(Error::Metric(format!("{} candidates for {} reference sets", candidates.len(), references.len())));
    }
    let stats = CorpusStats::new(references)?;
    let per_image: Vec<f64> = candidates.iter().zip(references).map(|(c, r)| stats.score(c, r)).collect();
    let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
    Ok(CiderScores { per_image, mean })
}
