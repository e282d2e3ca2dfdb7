//! Cross-review difficulty scoring and easy-to-hard stage schedules.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::{CaptionScores, MetricSpec};
use crate::model::{CaptionModel, ModelConfig, Prepared};
use crate::pool::parallel_map;
use crate::scalar::Scalar;
use crate::train::{evaluate, LogRow, TrainConfig, Trainer};
use crate::transformer::{greedy, DecodeOptions};

/// Balanced sizes for `n` items in `parts` chunks; the larger chunks come last.
pub fn balanced_sizes(n: usize, parts: usize) -> Vec<usize> {
    let (q, r) = (n / parts, n % parts);
    (0..parts).map(|i| q + usize::from(i >= parts - r)).collect()
}

/// Seeded partition of sample positions `0..n` into `m` shards.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub m: usize,
    pub seed: u64,
    /// Shard of each sample position.
    pub assignment: Vec<usize>,
}

impl ShardPlan {
    pub fn shard(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == k).collect()
    }

    pub fn shards(&self) -> Vec<Vec<usize>> {
        (0..self.m).map(|k| self.shard(k)).collect()
    }
}

pub fn make_shards(n: usize, m: usize, seed: u64) -> Result<ShardPlan> {
    if m < 2 {
        return Err(Error::Curriculum(format!("cross-review needs at least 2 shards, got {m}")));
    }
    if m > n {
        return Err(Error::Curriculum(format!("{m} shards for only {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = rank % m;
    }
    Ok(ShardPlan { m, seed, assignment })
}

fn derive_seed(base: u64, tag: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ 0x5851_F42D_4C95_7F2D
}

/// One model per shard, each trained for `epochs` passes over its own shard
/// only. Neighbour banks are built from all of `data`.
pub fn train_shard_models<T: Scalar>(
    plan: &ShardPlan,
    data: &[Prepared<T>],
    model: &ModelConfig,
    train: &TrainConfig,
    epochs: usize,
    audit: bool,
    workers: usize,
) -> Result<Vec<Trainer<T>>> {
    if plan.assignment.len() != data.len() {
        return Err(Error::Curriculum(format!("plan covers {} samples, data has {}", plan.assignment.len(), data.len())));
    }
    parallel_map(plan.shards(), workers, |k, idx| -> Result<Trainer<T>> {
        let seed = derive_seed(train.seed, k as u64 + 1);
        let steps = epochs as u64 * idx.len().div_ceil(train.batch_size) as u64;
        let mut tr = Trainer::new(CaptionModel::new(model.clone(), seed)?, TrainConfig { seed, ..train.clone() }, steps)?;
        if audit {
            tr.audit = Some(Default::default());
        }
        for _ in 0..epochs {
            tr.epoch(data, &idx).map_err(|e| Error::Curriculum(format!("shard {k}: {e}")))?;
        }
        Ok(tr)
    })
    .into_iter()
    .collect()
}

/// Anything that can caption a sample by position.
pub trait Captioner {
    fn caption(&self, sample: usize) -> Result<Vec<String>>;
}

/// Greedy captions from a trained model.
pub struct ModelCaptioner<'a, T: Scalar> {
    pub model: &'a CaptionModel<T>,
    pub vocab: &'a Vocabulary,
    pub data: &'a [Prepared<T>],
    pub max_len: usize,
}

impl<T: Scalar> Captioner for ModelCaptioner<'_, T> {
    fn caption(&self, sample: usize) -> Result<Vec<String>> {
        let input = self.data.get(sample).ok_or_else(|| Error::index("caption", format!("sample {sample}")))?;
        let memory = self.model.memory(input)?;
        let state = greedy(&mut self.model.scorer(&memory), self.max_len)?;
        self.vocab.decode_caption(&state.tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEntry {
    pub sample_id: u64,
    pub shard: usize,
    /// Mean of `1 - metric` over the scorers.
    pub ds: f64,
    /// `(scorer shard, metric value)`, ascending by scorer.
    pub scores: Vec<(usize, f64)>,
}

/// Mean of `1 - v` over the metric values.
pub fn difficulty_score(metric_values: &[f64]) -> f64 {
    metric_values.iter().map(|v| 1.0 - v).sum::<f64>() / metric_values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyTable {
    pub m: usize,
    pub entries: Vec<DifficultyEntry>,
}

impl DifficultyTable {
    /// Entry per sample with DS recomputed from the provenance list.
    pub fn from_scores(m: usize, rows: Vec<(u64, usize, Vec<(usize, f64)>)>) -> Result<Self> {
        let entries = rows
            .into_iter()
            .map(|(sample_id, shard, scores)| {
                let vals: Vec<f64> = scores.iter().map(|s| s.1).collect();
                DifficultyEntry { sample_id, shard, ds: difficulty_score(&vals), scores }
            })
            .collect();
        let t = DifficultyTable { m, entries };
        t.validate()?;
        Ok(t)
    }

    /// Provenance audit: scorers are exactly the other `m - 1` shards, metric
    /// values and DS lie in `[0, 1]`, DS matches its scores, ids are unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.sample_id) {
                return Err(Error::Curriculum(format!("sample {} scored twice", e.sample_id)));
            }
            if e.shard >= self.m {
                return Err(Error::Curriculum(format!("sample {} has home shard {} of {}", e.sample_id, e.shard, self.m)));
            }
            let scorers: Vec<usize> = e.scores.iter().map(|s| s.0).collect();
            let expected: Vec<usize> = (0..self.m).filter(|&k| k != e.shard).collect();
            if scorers != expected {
                return Err(Error::Curriculum(format!("sample {} scored by {scorers:?}, expected {expected:?}", e.sample_id)));
            }
            if e.scores.iter().any(|s| !(0.0..=1.0).contains(&s.1)) || !(0.0..=1.0).contains(&e.ds) {
                return Err(Error::Curriculum(format!("sample {} has a score outside [0, 1]", e.sample_id)));
            }
            let vals: Vec<f64> = e.scores.iter().map(|s| s.1).collect();
            if self.m > 1 && (difficulty_score(&vals) - e.ds).abs() > 1e-12 {
                return Err(Error::Curriculum(format!("sample {} has DS {} inconsistent with its scores", e.sample_id, e.ds)));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["sample_id".to_string(), "shard_id".into(), "DS".into()];
        header.extend((1..self.m).map(|k| format!("metric_{k}")));
        w.write_record(&header)?;
        for e in &self.entries {
            let mut row = vec![e.sample_id.to_string(), e.shard.to_string(), format!("{:?}", e.ds)];
            row.extend(e.scores.iter().map(|s| format!("{:?}", s.1)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "shard_id" || &header[2] != "DS" {
            return Err(Error::Curriculum(format!("unexpected difficulty header {header:?}")));
        }
        let m = header.len() - 2;
        let parse = |s: &str, what: &str| -> Result<f64> { s.parse().map_err(|_| Error::Curriculum(format!("bad {what} value {s:?}"))) };
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let shard: usize = rec[1].parse().map_err(|_| Error::Curriculum(format!("bad shard {:?}", &rec[1])))?;
            let scorers = (0..m).filter(|&k| k != shard);
            let scores = scorers.zip(3..rec.len()).map(|(k, c)| Ok((k, parse(&rec[c], "metric")?))).collect::<Result<Vec<_>>>()?;
            entries.push(DifficultyEntry {
                sample_id: rec[0].parse().map_err(|_| Error::Curriculum(format!("bad sample id {:?}", &rec[0])))?,
                shard,
                ds: parse(&rec[2], "DS")?,
                scores,
            });
        }
        let t = DifficultyTable { m, entries };
        t.validate()?;
        Ok(t)
    }
}

/// Scores every sample with every scorer except its home shard's.
/// `scorers[k]` is the model trained on shard `k`.
pub fn cross_review<C: Captioner>(
    plan: &ShardPlan,
    scorers: &[C],
    ids: &[u64],
    references: &[Vec<Vec<String>>],
    metric: &MetricSpec,
) -> Result<DifficultyTable> {
    if scorers.len() != plan.m {
        return Err(Error::Curriculum(format!("{} scorer models for {} shards", scorers.len(), plan.m)));
    }
    if ids.len() != plan.assignment.len() || references.len() != ids.len() {
        return Err(Error::Curriculum("ids, references and plan disagree in length".into()));
    }
    let rows = (0..ids.len())
        .map(|i| {
            let home = plan.assignment[i];
            let scores =
                (0..plan.m).filter(|&k| k != home).map(|k| Ok((k, metric.score(&scorers[k].caption(i)?, &references[i])?))).collect::<Result<Vec<_>>>()?;
            Ok((ids[i], home, scores))
        })
        .collect::<Result<Vec<_>>>()?;
    DifficultyTable::from_scores(plan.m, rows)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Every stage takes an equal slice of every bucket.
    #[default]
    Literal,
    /// Stage `i` draws only from buckets `1..=i`.
    Cumulative,
}

impl FromStr for ScheduleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ScheduleMode::Literal),
            "cumulative" => Ok(ScheduleMode::Cumulative),
            _ => Err(Error::config("schedule_mode", format!("unknown mode {s:?}"))),
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Literal => "literal",
            ScheduleMode::Cumulative => "cumulative",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub mode: ScheduleMode,
    pub seed: u64,
    pub m: usize,
    /// Sample ids sorted by ascending difficulty.
    pub sorted_ids: Vec<u64>,
    /// `m + 1` offsets into `sorted_ids`; bucket `k` is `[b[k], b[k+1])`.
    pub bucket_bounds: Vec<usize>,
    /// `m + 1` stages; the last holds every sample.
    pub stages: Vec<Vec<u64>>,
}

impl CurriculumSchedule {
    pub fn bucket(&self, k: usize) -> &[u64] {
        &self.sorted_ids[self.bucket_bounds[k]..self.bucket_bounds[k + 1]]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Optimiser steps needed to run every stage `epochs` times.
    pub fn steps(&self, batch_size: usize, epochs: usize) -> u64 {
        self.stages.iter().map(|s| (epochs * s.len().div_ceil(batch_size)) as u64).sum()
    }
}

/// Sorts by DS (ties by id), cuts `m` contiguous buckets and composes
/// `m + 1` stages according to `mode`.
pub fn build_schedule(table: &DifficultyTable, m: usize, mode: ScheduleMode, seed: u64) -> Result<CurriculumSchedule> {
    if m == 0 {
        return Err(Error::Curriculum("need at least one bucket".into()));
    }
    let mut rows: Vec<(f64, u64)> = table.entries.iter().map(|e| (e.ds, e.sample_id)).collect();
    if rows.iter().any(|r| r.0.is_nan()) {
        return Err(Error::Curriculum("difficulty table contains NaN".into()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let sorted_ids: Vec<u64> = rows.into_iter().map(|r| r.1).collect();
    let mut bucket_bounds = vec![0];
    for s in balanced_sizes(sorted_ids.len(), m) {
        bucket_bounds.push(bucket_bounds.last().unwrap() + s);
    }
    let mut stages: Vec<Vec<u64>> = vec![Vec::new(); m];
    for k in 0..m {
        let bucket = &sorted_ids[bucket_bounds[k]..bucket_bounds[k + 1]];
        match mode {
            ScheduleMode::Literal => {
                let q = bucket.len() / m;
                for (i, stage) in stages.iter_mut().enumerate() {
                    let end = if i + 1 == m { bucket.len() } else { (i + 1) * q };
                    stage.extend_from_slice(&bucket[i * q..end]);
                }
            }
            ScheduleMode::Cumulative => {
                let mut start = 0;
                // Earlier stages take the larger chunks, so no stage loses a
                // harder bucket's share while keeping an easier one's.
                for (j, size) in balanced_sizes(bucket.len(), m - k).into_iter().rev().enumerate() {
                    stages[k + j].extend_from_slice(&bucket[start..start + size]);
                    start += size;
                }
            }
        }
    }
    stages.push(sorted_ids.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut stages {
        s.shuffle(&mut rng);
    }
    Ok(CurriculumSchedule { mode, seed, m, sorted_ids, bucket_bounds, stages })
}

/// Validation set and decoding used for the per-stage report.
pub struct Validation<'a, T> {
    pub data: &'a [Prepared<T>],
    pub vocab: &'a Vocabulary,
    pub decode: DecodeOptions,
}

/// Trains through the stages in order, `epochs` shuffled passes each.
/// Stage samples are looked up by id in `data`.
pub fn curriculum_train<T: Scalar>(
    trainer: &mut Trainer<T>,
    data: &[Prepared<T>],
    schedule: &CurriculumSchedule,
    epochs: usize,
    validation: Option<&Validation<'_, T>>,
) -> Result<Vec<LogRow>> {
    let pos: HashMap<u64, usize> = data.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut log = Vec::with_capacity(schedule.stages.len());
    for (si, stage) in schedule.stages.iter().enumerate() {
        let idx = stage
            .iter()
            .map(|id| pos.get(id).copied().ok_or_else(|| Error::Curriculum(format!("stage {} names unknown sample {id}", si + 1))))
            .collect::<Result<Vec<_>>>()?;
        let (mut steps, mut loss_sum) = (0, 0.0);
        if !idx.is_empty() {
            for _ in 0..epochs {
                let e = trainer.epoch(data, &idx).map_err(|e| Error::Curriculum(format!("stage {}: {e}", si + 1)))?;
                steps += e.steps;
                loss_sum += e.mean_loss * e.steps as f64;
            }
        }
        let val = match validation {
            Some(v) => evaluate(&trainer.model, v.vocab, v.data, &v.decode)?.0,
            None => CaptionScores::default(),
        };
        log.push(LogRow {
            phase: "stage".into(),
            index: si + 1,
            samples: idx.len(),
            steps,
            step: trainer.step,
            train_loss: if steps > 0 { loss_sum / steps as f64 } else { f64::NAN },
            val,
        });
    }
    Ok(log)
}
