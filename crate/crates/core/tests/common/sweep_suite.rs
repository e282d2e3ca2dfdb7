//! Hyper-parameter sweeps and the CSV files they leave behind.

use std::path::Path;

use super::{tiny_run, Check};
use dgcn::config::RunConfig;
use dgcn::experiment::{build_corpus, read_scores, sweep, write_sweep, SweepParam};
use dgcn::metrics::CaptionScores;

/// Problems with a sweep CSV: header, row count, values or metric ranges.
pub fn csv_problems(path: &Path, param: SweepParam, values: &[usize]) -> Vec<String> {
    let (keys, rows) = match read_scores(path) {
        Ok(x) => x,
        Err(e) => return vec![format!("{}: {e}", path.display())],
    };
    let mut out = Vec::new();
    if keys != ["param", "value", "steps"] {
        out.push(format!("key columns {keys:?}"));
    }
    if rows.len() != values.len() {
        out.push(format!("{} rows for {} values", rows.len(), values.len()));
    }
    for ((k, s), &v) in rows.iter().zip(values) {
        if k[0] != param.to_string() || k[1] != v.to_string() || k[2].parse::<u64>().map_or(true, |n| n == 0) {
            out.push(format!("row keys {k:?} for {param}={v}"));
        }
        let ok = s.values()[..5].iter().all(|x| (0.0..=1.0).contains(x)) && s.cider.is_finite() && s.cider >= 0.0;
        if !ok {
            out.push(format!("{param}={v}: metrics out of range {s:?}"));
        }
    }
    out
}

pub fn sweep_config() -> RunConfig {
    tiny_run(90, &["curriculum.shards=5"])
}

/// Runs the sweep, writes `sweep_{param}.csv` into `dir` and checks it.
pub fn run_sweep(cfg: &RunConfig, dir: &Path, param: SweepParam, values: &[usize]) -> (Vec<String>, Vec<CaptionScores>) {
    let corpus = build_corpus(cfg).unwrap();
    let path = dir.join(format!("sweep_{param}.csv"));
    match sweep(cfg, &corpus, param, values) {
        Ok(rows) => {
            write_sweep(&path, param, &rows).unwrap();
            (csv_problems(&path, param, values), rows.iter().map(|r| r.test).collect())
        }
        Err(e) => (vec![format!("sweep failed: {e}")], Vec::new()),
    }
}

pub fn run(dir: &Path) -> Vec<Check> {
    let cfg = sweep_config();
    let ks: Vec<usize> = (3..=9).collect();
    let ms: Vec<usize> = (5..=9).collect();
    let (k, _) = run_sweep(&cfg, dir, SweepParam::K, &ks);
    let (m, _) = run_sweep(&cfg, dir, SweepParam::M, &ms);
    vec![
        Check::new("K sweep 3..9 completes with a well-formed CSV", k.is_empty(), format!("{} rows, problems {k:?}", ks.len())),
        Check::new("M sweep 5..9 completes with a well-formed CSV", m.is_empty(), format!("{} rows, problems {m:?}", ms.len())),
    ]
}
