//! Shard, difficulty and schedule invariants, and a two-shard cross-review
//! run with sample auditing.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use super::Check;
use dgcn::config::RunConfig;
use dgcn::curriculum::{
    build_schedule, cross_review, curriculum_train, make_shards, train_shard_models, CurriculumSchedule, DifficultyEntry, DifficultyTable, ModelCaptioner,
    ScheduleMode, Validation,
};
use dgcn::experiment::{build_corpus, model_config, prepare_inputs, Corpus, Inputs, RunSeeds};
use dgcn::model::{CaptionModel, DecoderKind, EncoderMode};
use dgcn::train::{LogRow, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PIPELINE_LIMIT: Duration = Duration::from_secs(300);

/// Problems with a shard plan: unequal sizes, overlap or missing samples.
pub fn shard_problems(n: usize, m: usize, seed: u64) -> Vec<String> {
    let plan = make_shards(n, m, seed).unwrap();
    let shards = plan.shards();
    let mut out = Vec::new();
    let (lo, hi) = (shards.iter().map(Vec::len).min().unwrap(), shards.iter().map(Vec::len).max().unwrap());
    if shards.len() != m || hi - lo > 1 {
        out.push(format!("n={n} m={m}: sizes {lo}..{hi} over {} shards", shards.len()));
    }
    let mut seen = vec![0usize; n];
    for s in &shards {
        for &i in s {
            seen[i] += 1;
        }
    }
    if seen.iter().any(|&c| c != 1) {
        out.push(format!("n={n} m={m}: not a partition"));
    }
    out
}

/// Random table whose DS values sit on a coarse grid, so ties are common.
pub fn random_table(n: usize, seed: u64) -> DifficultyTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u64> = (0..n as u64 * 2).step_by(2).collect();
    ids.reverse();
    DifficultyTable {
        m: 1,
        entries: ids.into_iter().map(|id| DifficultyEntry { sample_id: id, shard: 0, ds: rng.random_range(0..=20) as f64 / 20.0, scores: vec![] }).collect(),
    }
}

fn ds_of(table: &DifficultyTable) -> std::collections::HashMap<u64, f64> {
    table.entries.iter().map(|e| (e.sample_id, e.ds)).collect()
}

pub fn stage_means(table: &DifficultyTable, schedule: &CurriculumSchedule) -> Vec<f64> {
    let ds = ds_of(table);
    schedule.stages.iter().map(|s| s.iter().map(|id| ds[id]).sum::<f64>() / s.len().max(1) as f64).collect()
}

/// Literal mode: the first `m` stages hold every sample exactly once, and
/// the last stage is the whole set.
pub fn literal_problems(table: &DifficultyTable, m: usize, seed: u64) -> Vec<String> {
    let s = build_schedule(table, m, ScheduleMode::Literal, seed).unwrap();
    let mut out = Vec::new();
    let mut ids: Vec<u64> = s.stages[..m].concat();
    ids.sort();
    let mut all: Vec<u64> = table.entries.iter().map(|e| e.sample_id).collect();
    all.sort();
    if ids != all {
        out.push(format!("n={} m={m}: stages 1..m are not a partition", all.len()));
    }
    let mut last = s.stages[m].clone();
    last.sort();
    if s.stages.len() != m + 1 || last != all {
        out.push(format!("n={} m={m}: final stage is not the full set", all.len()));
    }
    out
}

/// Cumulative mode: mean DS of stages 1..m never decreases, and the
/// stages still cover every sample once.
pub fn cumulative_problems(table: &DifficultyTable, m: usize, seed: u64) -> Vec<String> {
    let s = build_schedule(table, m, ScheduleMode::Cumulative, seed).unwrap();
    let means = stage_means(table, &s);
    let mut out = Vec::new();
    for k in 1..m {
        if s.stages[k].is_empty() || s.stages[k - 1].is_empty() {
            continue;
        }
        if means[k] < means[k - 1] - 1e-12 {
            out.push(format!("n={} m={m}: stage {} mean {:.4} < stage {} mean {:.4}", table.entries.len(), k + 1, means[k], k, means[k - 1]));
        }
    }
    let mut ids: Vec<u64> = s.stages[..m].concat();
    ids.sort();
    ids.dedup();
    if ids.len() != table.entries.len() {
        out.push(format!("n={} m={m}: cumulative stages miss samples", table.entries.len()));
    }
    out
}

/// Sweeps many `(n, m)` shapes; returns every problem found.
pub fn schedule_problems(seed: u64) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut shards, mut literal, mut cumulative) = (Vec::new(), Vec::new(), Vec::new());
    for case in 0..300 {
        let n = rng.random_range(2..=120);
        let m = rng.random_range(2..=n.min(12));
        shards.extend(shard_problems(n, m, case));
        let table = random_table(n, case);
        literal.extend(literal_problems(&table, m, case));
        cumulative.extend(cumulative_problems(&table, m, case));
    }
    (shards, literal, cumulative)
}

/// What the audited two-shard run observed.
pub struct ReviewAudit {
    pub elapsed: Duration,
    pub table: DifficultyTable,
    pub schedule: CurriculumSchedule,
    pub log: Vec<LogRow>,
    pub ds_range: (f64, f64),
    /// Samples a shard model was trained on that belong to another shard.
    pub leaked: usize,
    /// Shard samples its model never trained on.
    pub unseen: usize,
    /// Entries whose scorers are not exactly the other shards.
    pub bad_scorers: usize,
    pub table_valid: Result<(), String>,
}

pub fn pipeline_config(samples: usize, m: usize) -> RunConfig {
    let overrides = [
        "profile=toy".to_string(),
        format!("data.samples={samples}"),
        "data.val=20".into(),
        "data.test=20".into(),
        format!("curriculum.shards={m}"),
        "curriculum.shard_epochs=2".into(),
        "curriculum.epochs_per_stage=1".into(),
    ];
    RunConfig::resolve(None, &overrides, None).unwrap()
}

/// Cross-review with `m` shards, then curriculum training, on a fresh
/// synthetic corpus; shard models record every sample they train on.
pub fn audited_review(cfg: &RunConfig) -> ReviewAudit {
    let start = Instant::now();
    let corpus: Corpus = build_corpus(cfg).unwrap();
    let mc = model_config(cfg, &corpus.vocab, EncoderMode::DUAL_GCN, DecoderKind::Transformer);
    let inputs: Inputs<f32> = prepare_inputs(&corpus, &mc).unwrap();
    let m = cfg.curriculum.shards;
    let seeds = RunSeeds::new(cfg.seed);
    let plan = make_shards(inputs.train.len(), m, seeds.shards).unwrap();
    let train = TrainConfig { seed: seeds.train, ..cfg.train.clone() };
    let shards = train_shard_models(&plan, &inputs.train, &mc, &train, cfg.curriculum.shard_epochs, true, 1).unwrap();
    let (mut leaked, mut unseen) = (0, 0);
    for (k, tr) in shards.iter().enumerate() {
        let own: BTreeSet<u64> = plan.shard(k).iter().map(|&i| inputs.train[i].id).collect();
        let seen = tr.audit.as_ref().unwrap();
        leaked += seen.difference(&own).count();
        unseen += own.difference(seen).count();
    }
    let captioners: Vec<_> =
        shards.iter().map(|t| ModelCaptioner { model: &t.model, vocab: &corpus.vocab, data: &inputs.train, max_len: cfg.decode.max_len }).collect();
    let ids: Vec<u64> = inputs.train.iter().map(|p| p.id).collect();
    let refs: Vec<Vec<Vec<String>>> = inputs.train.iter().map(|p| p.references.clone()).collect();
    let table = cross_review(&plan, &captioners, &ids, &refs, &cfg.curriculum.metric).unwrap();
    let bad_scorers = table
        .entries
        .iter()
        .filter(|e| {
            let scorers: Vec<usize> = e.scores.iter().map(|s| s.0).collect();
            let want: Vec<usize> = (0..m).filter(|&k| k != e.shard).collect();
            scorers != want || plan.assignment[ids.iter().position(|&i| i == e.sample_id).unwrap()] != e.shard
        })
        .count();
    let ds = table.entries.iter().map(|e| e.ds);
    let ds_range = ds.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let schedule = build_schedule(&table, m, cfg.curriculum.mode, seeds.schedule).unwrap();
    let mut tr = Trainer::new(
        CaptionModel::new(model_config(cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder), seeds.init).unwrap(),
        train,
        schedule.steps(cfg.train.batch_size, cfg.curriculum.epochs_per_stage),
    )
    .unwrap();
    let v = Validation { data: &inputs.val, vocab: &corpus.vocab, decode: cfg.decode };
    let log = curriculum_train(&mut tr, &inputs.train, &schedule, cfg.curriculum.epochs_per_stage, Some(&v)).unwrap();
    ReviewAudit {
        elapsed: start.elapsed(),
        table_valid: table.validate().map_err(|e| e.to_string()),
        table,
        schedule,
        log,
        ds_range,
        leaked,
        unseen,
        bad_scorers,
    }
}

pub fn run(seed: u64) -> Vec<Check> {
    let (shards, literal, cumulative) = schedule_problems(seed);
    let first = |v: &[String]| v.first().cloned().unwrap_or_default();
    let mut out = vec![
        Check::new("shards balanced and disjoint (300 random plans)", shards.is_empty(), format!("{} problems {}", shards.len(), first(&shards))),
        Check::new("literal stages partition the data (300 tables)", literal.is_empty(), format!("{} problems {}", literal.len(), first(&literal))),
        Check::new(
            "cumulative stage mean difficulty monotone (300 tables)",
            cumulative.is_empty(),
            format!("{} problems {}", cumulative.len(), first(&cumulative)),
        ),
    ];
    let cfg = RunConfig { seed, ..pipeline_config(200, 2) };
    let a = audited_review(&cfg);
    out.push(Check::new(
        "DS in [0,1] and table consistent",
        a.ds_range.0 >= 0.0 && a.ds_range.1 <= 1.0 && a.table_valid.is_ok(),
        format!("DS range [{:.3}, {:.3}], {:?}", a.ds_range.0, a.ds_range.1, a.table_valid),
    ));
    out.push(Check::new(
        "scorer exclusion audit",
        a.leaked == 0 && a.unseen == 0 && a.bad_scorers == 0,
        format!("{} foreign samples trained on, {} own samples unseen, {} entries with wrong scorers", a.leaked, a.unseen, a.bad_scorers),
    ));
    out.push(Check::new(
        "M=2 cross-review pipeline on 200 samples < 5 min",
        a.elapsed < PIPELINE_LIMIT && a.log.len() == 3,
        format!("{:.1} s, {} stage rows", a.elapsed.as_secs_f64(), a.log.len()),
    ));
    out
}
