//! End-to-end runs: corpus preparation, cross-review, curriculum or plain
//! training, ablations over encoder/decoder variants and parameter sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::curriculum::{
    build_schedule, cross_review, curriculum_train, make_shards, train_shard_models, CurriculumSchedule, DifficultyTable, ModelCaptioner, ShardPlan, Validation,
};
use crate::data::{assign_splits, generate_corpus, load_corpus, select, SceneSample, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::CaptionScores;
use crate::model::{prepare, CaptionModel, DecoderKind, EncoderMode, ModelConfig, Prepared};
use crate::pool::parallel_map;
use crate::scalar::Scalar;
use crate::train::{evaluate, model_checkpoint, write_log, LogRow, TrainConfig, Trainer};
use crate::transformer::DecodeOptions;

/// Train, validation and test samples plus the training vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<SceneSample>,
    pub val: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
    pub vocab: Vocabulary,
}

/// Loads `data.corpus_dir` or generates and splits a synthetic corpus.
pub fn build_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let samples = match &cfg.data.corpus_dir {
        Some(dir) => load_corpus(dir, cfg.model.max_regions)?,
        None => {
            let mut s = generate_corpus(&cfg.data.synthetic, cfg.data.samples)?;
            assign_splits(&mut s, cfg.data.val, cfg.data.test, cfg.data.split_seed)?;
            s
        }
    };
    let train = select(&samples, Split::Train);
    if train.is_empty() {
        return Err(Error::config("data", "corpus has no training samples"));
    }
    let vocab = Vocabulary::build(train.iter().flat_map(|s| s.references.iter().map(|r| r.iter().map(String::as_str))), cfg.data.min_count);
    Ok(Corpus { val: select(&samples, Split::Val), test: select(&samples, Split::Test), train, vocab })
}

/// The configured model with the given encoder and decoder, sized to the
/// vocabulary. Synthetic corpora supply the image extent for the relation
/// policy when none is configured.
pub fn model_config(cfg: &RunConfig, vocab: &Vocabulary, encoder: EncoderMode, decoder: DecoderKind) -> ModelConfig {
    let mut m = ModelConfig { vocab_size: vocab.len(), encoder, decoder, ..cfg.model.clone() };
    if m.relations.image_size.is_none() && cfg.data.corpus_dir.is_none() {
        m.relations.image_size = Some(cfg.data.synthetic.image_size());
    }
    m
}

/// Model inputs for every split.
pub struct Inputs<T> {
    pub train: Vec<Prepared<T>>,
    pub val: Vec<Prepared<T>>,
    pub test: Vec<Prepared<T>>,
}

pub fn prepare_inputs<T: Scalar>(corpus: &Corpus, model: &ModelConfig) -> Result<Inputs<T>> {
    Ok(Inputs {
        train: prepare(&corpus.train, &corpus.vocab, model)?,
        val: prepare(&corpus.val, &corpus.vocab, model)?,
        test: prepare(&corpus.test, &corpus.vocab, model)?,
    })
}

/// Independent streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSeeds {
    pub init: u64,
    pub train: u64,
    pub shards: u64,
    pub schedule: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        let mix = |tag: u64| {
            let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        RunSeeds { init: mix(1), train: mix(2), shards: mix(3), schedule: mix(4) }
    }
}

/// Shard models, their cross-review table and the resulting schedule.
pub struct Review<T: Scalar> {
    pub plan: ShardPlan,
    pub shards: Vec<Trainer<T>>,
    pub table: DifficultyTable,
    pub schedule: CurriculumSchedule,
}

/// Trains one Dual-GCN transformer per shard, scores every training sample
/// with the models that never saw it and orders the data into stages.
pub fn review<T: Scalar>(cfg: &RunConfig, corpus: &Corpus, inputs: &Inputs<T>, seed: u64) -> Result<Review<T>> {
    let seeds = RunSeeds::new(seed);
    let m = cfg.curriculum.shards;
    let plan = make_shards(inputs.train.len(), m, seeds.shards)?;
    let model = model_config(cfg, &corpus.vocab, EncoderMode::DUAL_GCN, DecoderKind::Transformer);
    let train = TrainConfig { seed: seeds.train, ..cfg.train.clone() };
    info!("training {m} shard models for {} epochs", cfg.curriculum.shard_epochs);
    let shards = train_shard_models(&plan, &inputs.train, &model, &train, cfg.curriculum.shard_epochs, false, cfg.workers)?;
    let captioners: Vec<ModelCaptioner<'_, T>> =
        shards.iter().map(|t| ModelCaptioner { model: &t.model, vocab: &corpus.vocab, data: &inputs.train, max_len: cfg.decode.max_len }).collect();
    let ids: Vec<u64> = inputs.train.iter().map(|p| p.id).collect();
    let refs: Vec<Vec<Vec<String>>> = inputs.train.iter().map(|p| p.references.clone()).collect();
    info!("cross-reviewing {} samples", ids.len());
    let table = cross_review(&plan, &captioners, &ids, &refs, &cfg.curriculum.metric)?;
    let schedule = build_schedule(&table, m, cfg.curriculum.mode, seeds.schedule)?;
    Ok(Review { plan, shards, table, schedule })
}

/// How much optimisation a run gets.
#[derive(Clone, Copy, Debug)]
pub enum Budget<'s> {
    Epochs(usize),
    Steps(u64),
    Curriculum(&'s CurriculumSchedule, usize),
}

impl Budget<'_> {
    pub fn steps(&self, n_train: usize, batch: usize) -> u64 {
        match *self {
            Budget::Epochs(e) => (e * n_train.div_ceil(batch)) as u64,
            Budget::Steps(s) => s,
            Budget::Curriculum(s, e) => s.steps(batch, e),
        }
    }
}

/// Trains a fresh model under `budget`, validating after every epoch or
/// stage.
pub fn train_model<T: Scalar>(
    model: &ModelConfig,
    train: &TrainConfig,
    inputs: &Inputs<T>,
    vocab: &Vocabulary,
    decode: &DecodeOptions,
    seed: u64,
    budget: Budget<'_>,
) -> Result<(Trainer<T>, Vec<LogRow>)> {
    let seeds = RunSeeds::new(seed);
    let total = budget.steps(inputs.train.len(), train.batch_size);
    let mut tr = Trainer::new(CaptionModel::new(model.clone(), seeds.init)?, TrainConfig { seed: seeds.train, ..train.clone() }, total)?;
    let log = continue_training(&mut tr, inputs, vocab, decode, budget)?;
    Ok((tr, log))
}

/// Runs whatever part of `budget` the trainer has not done yet.
pub fn continue_training<T: Scalar>(
    tr: &mut Trainer<T>,
    inputs: &Inputs<T>,
    vocab: &Vocabulary,
    decode: &DecodeOptions,
    budget: Budget<'_>,
) -> Result<Vec<LogRow>> {
    let all: Vec<usize> = (0..inputs.train.len()).collect();
    let per_epoch = inputs.train.len().div_ceil(tr.config.batch_size) as u64;
    let validate = |tr: &Trainer<T>| -> Result<CaptionScores> {
        if inputs.val.is_empty() {
            Ok(CaptionScores::default())
        } else {
            Ok(evaluate(&tr.model, vocab, &inputs.val, decode)?.0)
        }
    };
    match budget {
        Budget::Curriculum(schedule, epochs) => {
            if tr.step != 0 {
                return Err(Error::config("resume", "curriculum runs cannot be resumed"));
            }
            let v = Validation { data: &inputs.val, vocab, decode: *decode };
            curriculum_train(tr, &inputs.train, schedule, epochs, (!inputs.val.is_empty()).then_some(&v))
        }
        Budget::Epochs(_) | Budget::Steps(_) => {
            let total = budget.steps(inputs.train.len(), tr.config.batch_size);
            let mut log = Vec::new();
            while tr.step < total {
                let chunk = per_epoch.min(total - tr.step);
                let e = tr.train_steps(&inputs.train, &all, chunk)?;
                log.push(LogRow {
                    phase: "epoch".into(),
                    index: tr.step.div_ceil(per_epoch) as usize,
                    samples: e.samples,
                    steps: e.steps,
                    step: tr.step,
                    train_loss: e.mean_loss,
                    val: validate(tr)?,
                });
            }
            Ok(log)
        }
    }
}

/// Outcome of [`run_pipeline`].
pub struct PipelineResult<T: Scalar> {
    pub trainer: Trainer<T>,
    pub log: Vec<LogRow>,
    pub val: CaptionScores,
    pub test: CaptionScores,
    pub review: Option<Review<T>>,
}

/// The full training recipe of one configuration: cross-review and
/// curriculum training when enabled, plain epochs otherwise, then test
/// evaluation. Artefacts go to `out` when given.
pub fn run_pipeline<T: Scalar>(cfg: &RunConfig, corpus: &Corpus, inputs: &Inputs<T>, seed: u64, out: Option<&Path>) -> Result<PipelineResult<T>> {
    let model = model_config(cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
    let review = if cfg.curriculum.enabled { Some(review(cfg, corpus, inputs, seed)?) } else { None };
    let budget = match &review {
        Some(r) => Budget::Curriculum(&r.schedule, cfg.curriculum.epochs_per_stage),
        None => Budget::Epochs(cfg.epochs),
    };
    let (trainer, log) = train_model(&model, &cfg.train, inputs, &corpus.vocab, &cfg.decode, seed, budget)?;
    let val = if inputs.val.is_empty() { CaptionScores::default() } else { evaluate(&trainer.model, &corpus.vocab, &inputs.val, &cfg.decode)?.0 };
    let test = if inputs.test.is_empty() { CaptionScores::default() } else { evaluate(&trainer.model, &corpus.vocab, &inputs.test, &cfg.decode)?.0 };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        if let Some(r) = &review {
            let shard_dir = dir.join("shards");
            std::fs::create_dir_all(&shard_dir)?;
            for (k, t) in r.shards.iter().enumerate() {
                t.to_checkpoint(&corpus.vocab)?.save(&shard_dir.join(format!("shard_{k}.ckpt")))?;
            }
            r.table.write_csv(&dir.join("difficulty.csv"))?;
            r.schedule.write_json(&dir.join("schedule.json"))?;
        }
        trainer.to_checkpoint(&corpus.vocab)?.save(&dir.join("model.ckpt"))?;
        write_log(&dir.join("train_log.csv"), &log)?;
        write_scores(&dir.join("metrics.csv"), &["split"], &[(vec!["val".into()], val), (vec!["test".into()], test)])?;
    }
    Ok(PipelineResult { trainer, log, val, test, review })
}

/// Writes `key columns..., bleu1..4, rougeL, cider` rows.
pub fn write_scores(path: &Path, keys: &[&str], rows: &[(Vec<String>, CaptionScores)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(keys.iter().copied().chain(CaptionScores::HEADER))?;
    for (k, s) in rows {
        if k.len() != keys.len() {
            return Err(Error::config("csv", format!("row has {} key columns, header has {}", k.len(), keys.len())));
        }
        w.write_record(k.iter().cloned().chain(s.values().iter().map(|v| format!("{v:?}"))))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_scores`]; returns the key header and
/// the rows.
pub fn read_scores(path: &Path) -> Result<(Vec<String>, Vec<(Vec<String>, CaptionScores)>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    if n < 6 || header[n - 6..].iter().ne(CaptionScores::HEADER) {
        return Err(Error::config("csv", format!("{} does not end with the metric columns", path.display())));
    }
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec?;
            let mut v = [0.0; 6];
            for (k, slot) in v.iter_mut().enumerate() {
                let cell = &rec[n - 6 + k];
                *slot = cell.parse().map_err(|_| Error::config("csv", format!("bad metric value {cell:?}")))?;
            }
            Ok((rec.iter().take(n - 6).map(str::to_string).collect(), CaptionScores::from_values(v)))
        })
        .collect::<Result<_>>()?;
    Ok((header[..n - 6].to_vec(), rows))
}

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationVariant {
    pub encoder: EncoderMode,
    pub decoder: DecoderKind,
    pub curriculum: bool,
}

impl AblationVariant {
    pub const fn new(encoder: EncoderMode, decoder: DecoderKind, curriculum: bool) -> Self {
        AblationVariant { encoder, decoder, curriculum }
    }

    /// All eleven encoder, decoder and curriculum combinations, baseline first.
    pub fn table() -> Vec<AblationVariant> {
        use DecoderKind::*;
        vec![
            Self::new(EncoderMode::F_OBJ, Transformer, false),
            Self::new(EncoderMode::GCN_OBJ, Transformer, false),
            Self::new(EncoderMode::F_OBJ, Transformer, true),
            Self::new(EncoderMode::GCN_OBJ, Transformer, true),
            Self::new(EncoderMode::F_IMG, Transformer, true),
            Self::new(EncoderMode::GCN_IMG, Transformer, true),
            Self::new(EncoderMode::GCN_OBJ_F_IMG, Transformer, true),
            Self::new(EncoderMode::GCN_IMG_F_OBJ, Transformer, true),
            Self::new(EncoderMode::DUAL_GCN, Transformer, false),
            Self::new(EncoderMode::DUAL_GCN, Recurrent, true),
            Self::new(EncoderMode::DUAL_GCN, Transformer, true),
        ]
    }

    /// Default experiment: the encoder ladder with curriculum plus the
    /// full model without it.
    pub fn default_set() -> Vec<AblationVariant> {
        vec![
            Self::new(EncoderMode::DUAL_GCN, DecoderKind::Transformer, true),
            Self::new(EncoderMode::GCN_OBJ, DecoderKind::Transformer, true),
            Self::new(EncoderMode::F_OBJ, DecoderKind::Transformer, true),
            Self::new(EncoderMode::DUAL_GCN, DecoderKind::Transformer, false),
        ]
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dec = match self.decoder {
            DecoderKind::Transformer => "Transformer",
            DecoderKind::Recurrent => "LSTM",
        };
        write!(f, "{} + {dec}", self.encoder.label())?;
        if self.curriculum {
            f.write_str(" + CL")?;
        }
        Ok(())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('+').map(str::trim).collect();
        let bad = || Error::config("variant", format!("cannot parse {s:?}; expected e.g. \"Dual-GCN + Transformer + CL\""));
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let encoder: EncoderMode = parts[0].parse()?;
        let decoder: DecoderKind = parts[1].to_ascii_lowercase().parse()?;
        let curriculum = match parts.get(2) {
            None => false,
            Some(p) if p.eq_ignore_ascii_case("cl") => true,
            Some(_) => return Err(bad()),
        };
        Ok(AblationVariant { encoder, decoder, curriculum })
    }
}

/// Per-seed test scores of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: String,
    pub seed: u64,
    pub steps: u64,
    pub test: CaptionScores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub variants: Vec<AblationVariant>,
    pub runs: Vec<VariantRun>,
    /// Per-variant medians over seeds, in `variants` order.
    pub medians: Vec<CaptionScores>,
}

impl AblationReport {
    /// Every variant used the same number of optimiser steps for a given
    /// seed.
    pub fn audit_budget(&self) -> Result<()> {
        for seed in self.runs.iter().map(|r| r.seed) {
            let steps: Vec<u64> = self.runs.iter().filter(|r| r.seed == seed).map(|r| r.steps).collect();
            if steps.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::config("budget", format!("seed {seed}: unequal step counts {steps:?}")));
            }
        }
        Ok(())
    }

    pub fn median(&self, v: &AblationVariant) -> Option<&CaptionScores> {
        self.variants.iter().position(|x| x == v).map(|i| &self.medians[i])
    }

    /// `ablation.csv` with one median row per variant and
    /// `ablation_seeds.csv` with one row per variant and seed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let n_seeds = self.runs.iter().map(|r| r.seed).collect::<std::collections::BTreeSet<_>>().len();
        let rows: Vec<(Vec<String>, CaptionScores)> = self
            .variants
            .iter()
            .zip(&self.medians)
            .map(|(v, m)| {
                let label = v.to_string();
                let steps = self.runs.iter().find(|r| r.variant == label).map_or(0, |r| r.steps);
                (vec![label, n_seeds.to_string(), steps.to_string()], *m)
            })
            .collect();
        write_scores(&dir.join("ablation.csv"), &["variant", "seeds", "steps"], &rows)?;
        let per: Vec<(Vec<String>, CaptionScores)> =
            self.runs.iter().map(|r| (vec![r.variant.clone(), r.seed.to_string(), r.steps.to_string()], r.test)).collect();
        write_scores(&dir.join("ablation_seeds.csv"), &["variant", "seed", "steps"], &per)
    }
}

/// Median of each metric; the mean of the middle pair for even counts.
pub fn median_scores(scores: &[CaptionScores]) -> CaptionScores {
    let mut out = [0.0; 6];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut v: Vec<f64> = scores.iter().map(|s| s.values()[k]).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        *slot = match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => v[n / 2],
            _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        };
    }
    CaptionScores::from_values(out)
}

/// Trains every variant under every seed with a matched step budget.
///
/// When any variant uses the curriculum, each seed first runs one
/// cross-review; every variant of that seed then gets the step count of the
/// resulting schedule. Otherwise all variants get `cfg.epochs` epochs.
pub fn ablate(cfg: &RunConfig, corpus: &Corpus, variants: &[AblationVariant]) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(Error::config("variants", "nothing to compare"));
    }
    let base = model_config(cfg, &corpus.vocab, EncoderMode::DUAL_GCN, DecoderKind::Transformer);
    let inputs: Inputs<f32> = prepare_inputs(corpus, &base)?;
    let mut runs = Vec::new();
    for seed in cfg.seeds() {
        let review = if variants.iter().any(|v| v.curriculum) { Some(review(cfg, corpus, &inputs, seed)?) } else { None };
        let steps = match &review {
            Some(r) => r.schedule.steps(cfg.train.batch_size, cfg.curriculum.epochs_per_stage),
            None => Budget::Epochs(cfg.epochs).steps(inputs.train.len(), cfg.train.batch_size),
        };
        let results = parallel_map(variants.to_vec(), cfg.workers, |_, v| -> Result<VariantRun> {
            let model = model_config(cfg, &corpus.vocab, v.encoder, v.decoder);
            let budget = match (&review, v.curriculum) {
                (Some(r), true) => Budget::Curriculum(&r.schedule, cfg.curriculum.epochs_per_stage),
                _ => Budget::Steps(steps),
            };
            info!("seed {seed}: {v}");
            let (tr, _) = train_model(&model, &cfg.train, &inputs, &corpus.vocab, &cfg.decode, seed, budget)?;
            let test = evaluate(&tr.model, &corpus.vocab, &inputs.test, &cfg.decode)?.0;
            Ok(VariantRun { variant: v.to_string(), seed, steps: tr.step, test })
        });
        for r in results {
            runs.push(r?);
        }
    }
    let medians = variants
        .iter()
        .map(|v| {
            let label = v.to_string();
            median_scores(&runs.iter().filter(|r| r.variant == label).map(|r| r.test).collect::<Vec<_>>())
        })
        .collect();
    let report = AblationReport { variants: variants.to_vec(), runs, medians };
    report.audit_budget()?;
    Ok(report)
}

/// Parameter varied by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    /// Neighbours in the image graph.
    K,
    /// Shards, buckets and stages of the curriculum.
    M,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParam::K),
            "M" | "m" => Ok(SweepParam::M),
            _ => Err(Error::config("param", format!("unknown sweep parameter {s:?}; expected K or M"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "K",
            SweepParam::M => "M",
        })
    }
}

impl SweepParam {
    pub fn apply(self, cfg: &RunConfig, value: usize) -> Result<RunConfig> {
        let mut c = cfg.clone();
        match self {
            SweepParam::K => c.model.neighbors = value,
            SweepParam::M => c.curriculum.shards = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub steps: u64,
    pub test: CaptionScores,
}

/// One full pipeline run per value with everything else fixed.
pub fn sweep(cfg: &RunConfig, corpus: &Corpus, param: SweepParam, values: &[usize]) -> Result<Vec<SweepRow>> {
    let configs = values.iter().map(|&v| Ok((v, param.apply(cfg, v)?))).collect::<Result<Vec<_>>>()?;
    let base = model_config(cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
    let inputs: Inputs<f32> = prepare_inputs(corpus, &base)?;
    if param == SweepParam::M {
        if let Some(&(v, _)) = configs.iter().find(|(v, _)| *v > inputs.train.len()) {
            return Err(Error::config("values", format!("M = {v} exceeds the {} training samples", inputs.train.len())));
        }
    }
    // Each value runs its own pipeline; nested shard pools stay sequential.
    let jobs: Vec<(usize, RunConfig)> = configs.into_iter().map(|(v, c)| (v, RunConfig { workers: 1, ..c })).collect();
    parallel_map(jobs, cfg.workers, |_, (value, c)| -> Result<SweepRow> {
        info!("{param} = {value}");
        let r = run_pipeline(&c, corpus, &inputs, cfg.seed, None)?;
        Ok(SweepRow { value, steps: r.trainer.step, test: r.test })
    })
    .into_iter()
    .collect()
}

pub fn write_sweep(path: &Path, param: SweepParam, rows: &[SweepRow]) -> Result<()> {
    let rows: Vec<(Vec<String>, CaptionScores)> = rows.iter().map(|r| (vec![param.to_string(), r.value.to_string(), r.steps.to_string()], r.test)).collect();
    write_scores(path, &["param", "value", "steps"], &rows)
}

/// Model checkpoint (no optimiser state) of a trained run.
pub fn save_model<T: Scalar>(model: &CaptionModel<T>, vocab: &Vocabulary, path: &Path) -> Result<()> {
    model_checkpoint(model, vocab)?.save(path)
}
