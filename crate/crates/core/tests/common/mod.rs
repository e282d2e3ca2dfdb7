#![allow(dead_code)]

pub mod curriculum_suite;
pub mod decoder_suite;
pub mod grad_suite;
pub mod graph_suite;
pub mod metric_suite;
pub mod oracles;
pub mod persistence_suite;
pub mod sweep_suite;

use dgcn::config::RunConfig;
use rand::Rng;

/// Random sentence over a small vocabulary `w0..w{vocab-1}`.
pub fn random_sentence<R: Rng>(rng: &mut R, min_len: usize, max_len: usize, vocab: usize) -> Vec<String> {
    let len = rng.random_range(min_len..=max_len);
    (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Outcome of one named property check.
#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), ok, detail: detail.into() }
    }

    /// `value <= tol`, reporting both.
    pub fn within(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check::new(name, value <= tol, format!("{value:.3e} (tolerance {tol:.0e})"))
    }
}

pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks.iter().filter(|c| !c.ok).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

/// Toy profile shrunk further so that whole pipelines take seconds.
pub fn tiny_run(samples: usize, extra: &[&str]) -> RunConfig {
    let mut overrides: Vec<String> = [
        "profile=toy",
        "model.feature_dim=16",
        "model.graph_dim=8",
        "model.d_model=16",
        "model.layers=1",
        "model.d_embed=16",
        "data.val=10",
        "data.test=10",
        "curriculum.shards=2",
        "curriculum.shard_epochs=1",
        "curriculum.epochs_per_stage=1",
        "epochs=2",
        "decode.max_len=12",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    overrides.push(format!("data.samples={samples}"));
    overrides.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::resolve(None, &overrides, None).unwrap()
}
