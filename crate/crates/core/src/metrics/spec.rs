use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{bleu, rouge_l, BleuOptions};
use crate::error::{Error, Result};

/// A sentence-level metric in `[0, 1]` named by a small expression:
/// `bleu1`..`bleu4`, `rougeL`, or `mean(a, b, ...)` over those.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricSpec {
    Bleu(usize),
    RougeL,
    Mean(Vec<MetricSpec>),
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec::Mean(vec![MetricSpec::Bleu(1), MetricSpec::Bleu(4)])
    }
}

impl MetricSpec {
    pub fn score<S: AsRef<str>>(&self, candidate: &[S], references: &[Vec<S>]) -> Result<f64> {
        match self {
            MetricSpec::Bleu(n) => bleu(candidate, references, *n, BleuOptions::default()),
            MetricSpec::RougeL => Ok(rouge_l(candidate, references)),
            MetricSpec::Mean(parts) => {
                let mut sum = 0.0;
                for p in parts {
                    sum += p.score(candidate, references)?;
                }
                Ok(sum / parts.len() as f64)
            }
        }
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::Metric(format!("unknown metric spec {s:?}"));
        if let Some(inner) = t.strip_prefix("mean(").and_then(|r| r.strip_suffix(')')) {
            let parts = split_top_level(inner).into_iter().map(MetricSpec::from_str).collect::<Result<Vec<_>>>()?;
            return Ok(MetricSpec::Mean(parts));
        }
        match t {
            "rougeL" | "rouge_l" | "rougel" => Ok(MetricSpec::RougeL),
            _ => match t.strip_prefix("bleu").and_then(|n| n.parse::<usize>().ok()) {
                Some(n @ 1..=4) => Ok(MetricSpec::Bleu(n)),
                _ => Err(bad()),
            },
        }
    }
}

/// Splits on commas that are not nested inside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Bleu(n) => write!(f, "bleu{n}"),
            MetricSpec::RougeL => write!(f, "rougeL"),
            MetricSpec::Mean(parts) => {
                let inner: Vec<String> = parts.iter().map(ToString::to_string).collect();
                write!(f, "mean({})", inner.join(","))
            }
        }
    }
}

impl TryFrom<String> for MetricSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricSpec> for String {
    fn from(m: MetricSpec) -> String {
        m.to_string()
    }
}
