use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::info;
use serde::Serialize;

use dgcn::checkpoint::Checkpoint;
use dgcn::config::RunConfig;
use dgcn::curriculum::{build_schedule, DifficultyTable, ScheduleMode};
use dgcn::data::{assign_splits, generate_corpus, load_corpus, load_region_features, save_corpus, select, SceneSample, Split};
use dgcn::experiment::{self as exp, AblationVariant, Budget, SweepParam};
use dgcn::metrics::{evaluate_corpus, evaluate_per_image, BleuOptions, CaptionScores};
use dgcn::model::prepare;
use dgcn::train::{caption_all, load_model, read_log, write_log, Trainer};
use dgcn::transformer::DecodeOptions;

use crate::ConfigArgs;

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(p) = &args.profile {
        overrides.push(format!("profile={p}"));
    }
    overrides.extend(args.overrides.iter().cloned());
    if let Some(d) = &args.data {
        overrides.push(format!("data.corpus_dir={}", serde_json::to_string(d)?));
    }
    if let Some(o) = &args.out {
        overrides.push(format!("out_dir={}", serde_json::to_string(o)?));
    }
    if let Some(w) = args.workers {
        overrides.push(format!("workers={w}"));
    }
    Ok(RunConfig::resolve_env(args.config.as_deref(), &overrides)?)
}

pub fn gen_data(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let mut samples = generate_corpus(&cfg.data.synthetic, cfg.data.samples)?;
    assign_splits(&mut samples, cfg.data.val, cfg.data.test, cfg.data.split_seed)?;
    save_corpus(&cfg.out_dir, &samples)?;
    cfg.persist(&cfg.out_dir)?;
    println!("wrote {} samples to {}", samples.len(), cfg.out_dir.display());
    Ok(())
}

pub fn train(args: &ConfigArgs, resume: Option<&Path>) -> Result<()> {
    let cfg = resolve(args)?;
    let out = cfg.out_dir.clone();
    cfg.persist(&out)?;
    let mut corpus = exp::build_corpus(&cfg)?;
    match resume {
        None => {
            let model = exp::model_config(&cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
            let inputs = exp::prepare_inputs::<f32>(&corpus, &model)?;
            let r = exp::run_pipeline(&cfg, &corpus, &inputs, cfg.seed, Some(&out))?;
            report(&r.log, &r.test);
        }
        Some(path) => {
            if cfg.curriculum.enabled {
                bail!("--resume continues plain training; pass --set curriculum.enabled=false");
            }
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let (mut tr, vocab) = Trainer::<f32>::from_checkpoint(&ck)?;
            corpus.vocab = vocab;
            let inputs = exp::prepare_inputs::<f32>(&corpus, &tr.model.config)?;
            tr.total_steps = Budget::Epochs(cfg.epochs).steps(inputs.train.len(), tr.config.batch_size);
            info!("resuming at step {} of {}", tr.step, tr.total_steps);
            let new_rows = exp::continue_training(&mut tr, &inputs, &corpus.vocab, &cfg.decode, Budget::Epochs(cfg.epochs))?;
            let log_path = out.join("train_log.csv");
            let mut log = if log_path.exists() { read_log(&log_path)? } else { Vec::new() };
            log.extend(new_rows);
            write_log(&log_path, &log)?;
            tr.to_checkpoint(&corpus.vocab)?.save(&out.join("model.ckpt"))?;
            let val = score(&tr, &corpus.vocab, &inputs.val, &cfg.decode)?;
            let test = score(&tr, &corpus.vocab, &inputs.test, &cfg.decode)?;
            exp::write_scores(&out.join("metrics.csv"), &["split"], &[(vec!["val".into()], val), (vec!["test".into()], test)])?;
            report(&log, &test);
        }
    }
    Ok(())
}

fn score(tr: &Trainer<f32>, vocab: &dgcn::data::Vocabulary, data: &[dgcn::model::Prepared<f32>], decode: &DecodeOptions) -> Result<CaptionScores> {
    if data.is_empty() {
        return Ok(CaptionScores::default());
    }
    Ok(dgcn::train::evaluate(&tr.model, vocab, data, decode)?.0)
}

fn report(log: &[dgcn::train::LogRow], test: &CaptionScores) {
    if let Some(last) = log.last() {
        println!("step {} train loss {:.4} val BLEU-1 {:.4}", last.step, last.train_loss, last.val.bleu1);
    }
    println!("test BLEU-1 {:.4} BLEU-4 {:.4} ROUGE-L {:.4} CIDEr {:.4}", test.bleu1, test.bleu4, test.rouge_l, test.cider);
}

fn decode_options(beam: usize, max_len: usize, alpha: f64) -> Result<DecodeOptions> {
    if beam == 0 {
        bail!("--beam must be positive");
    }
    if max_len < 2 {
        bail!("--max-len must be at least 2");
    }
    Ok(DecodeOptions { beam_width: beam, max_len, length_alpha: alpha })
}

#[derive(Args)]
pub struct CaptionArgs {
    #[arg(long, value_name = "CKPT")]
    checkpoint: PathBuf,
    /// DGRF feature file.
    #[arg(long, value_name = "FILE")]
    features: PathBuf,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Token budget including `<bos>`.
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    /// Length-normalisation exponent for beam search.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CaptionLine<'a> {
    id: u64,
    caption: String,
    tokens: &'a [String],
    token_ids: &'a [usize],
    /// Log-probability of each generated token, `<eos>` included.
    log_probs: &'a [f64],
    log_prob: f64,
}

pub fn caption(args: &CaptionArgs) -> Result<()> {
    let opts = decode_options(args.beam, args.max_len, args.alpha)?;
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let (model, vocab) = load_model::<f32>(&ck)?;
    let samples = load_region_features(&args.features, None, model.config.max_regions).with_context(|| format!("reading {}", args.features.display()))?;
    let inputs = prepare(&samples, &vocab, &model.config)?;
    let states = caption_all(&model, &inputs, &opts)?;
    let mut w: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for (s, st) in samples.iter().zip(&states) {
        let tokens = vocab.decode_caption(&st.tokens)?;
        let line =
            CaptionLine { id: s.id, caption: tokens.join(" "), tokens: &tokens, token_ids: st.body(), log_probs: &st.log_probs, log_prob: st.total_log_prob() };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    checkpoint: PathBuf,
    /// Corpus directory with `features.dgrf` and `captions.jsonl`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Per-image CSV; stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let opts = decode_options(args.beam, args.max_len, args.alpha)?;
    let split: Split = args.split.parse()?;
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let (model, vocab) = load_model::<f32>(&ck)?;
    let samples: Vec<SceneSample> = select(&load_corpus(&args.data, model.config.max_regions)?, split);
    let inputs = prepare(&samples, &vocab, &model.config)?;
    let captions: Vec<Vec<String>> = caption_all(&model, &inputs, &opts)?.iter().map(|c| vocab.decode_caption(&c.tokens)).collect::<dgcn::Result<_>>()?;
    let refs: Vec<Vec<Vec<String>>> = samples.iter().map(|s| s.references.clone()).collect();
    let per = evaluate_per_image(&captions, &refs, BleuOptions::default())?;
    let rows: Vec<(Vec<String>, CaptionScores)> = samples.iter().zip(per).map(|(s, sc)| (vec![s.id.to_string()], sc)).collect();
    match &args.out {
        Some(p) => exp::write_scores(p, &["image_id"], &rows)?,
        None => {
            let tmp = tempfile_path()?;
            exp::write_scores(&tmp, &["image_id"], &rows)?;
            io::stdout().write_all(&std::fs::read(&tmp)?)?;
            std::fs::remove_file(&tmp)?;
        }
    }
    let corpus = evaluate_corpus(&captions, &refs, BleuOptions::default())?;
    eprintln!(
        "{} images: BLEU-1 {:.4} BLEU-2 {:.4} BLEU-3 {:.4} BLEU-4 {:.4} ROUGE-L {:.4} CIDEr {:.4}",
        samples.len(),
        corpus.bleu1,
        corpus.bleu2,
        corpus.bleu3,
        corpus.bleu4,
        corpus.rouge_l,
        corpus.cider
    );
    Ok(())
}

fn tempfile_path() -> Result<PathBuf> {
    Ok(std::env::temp_dir().join(format!("dgcn-eval-{}.csv", std::process::id())))
}

pub fn cross_review(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args)?;
    if cfg.curriculum.shards < 2 {
        bail!("curriculum.shards must be at least 2");
    }
    let out = cfg.out_dir.clone();
    cfg.persist(&out)?;
    let corpus = exp::build_corpus(&cfg)?;
    let model = exp::model_config(&cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
    let inputs = exp::prepare_inputs::<f32>(&corpus, &model)?;
    let r = exp::review(&cfg, &corpus, &inputs, cfg.seed)?;
    let shard_dir = out.join("shards");
    std::fs::create_dir_all(&shard_dir)?;
    for (k, t) in r.shards.iter().enumerate() {
        t.to_checkpoint(&corpus.vocab)?.save(&shard_dir.join(format!("shard_{k}.ckpt")))?;
    }
    r.table.write_csv(&out.join("difficulty.csv"))?;
    r.schedule.write_json(&out.join("schedule.json"))?;
    let mean = r.table.entries.iter().map(|e| e.ds).sum::<f64>() / r.table.entries.len() as f64;
    println!("scored {} samples with {} shard models; mean DS {mean:.4}", r.table.entries.len(), r.plan.m);
    Ok(())
}

#[derive(Args)]
pub struct ScheduleArgs {
    /// Difficulty table CSV.
    #[arg(long, value_name = "FILE")]
    table: PathBuf,
    /// Number of buckets; the table's shard count when absent.
    #[arg(long)]
    m: Option<usize>,
    /// `literal` or `cumulative`.
    #[arg(long, default_value = "literal")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn schedule(args: &ScheduleArgs) -> Result<()> {
    let table = DifficultyTable::read_csv(&args.table).with_context(|| format!("reading {}", args.table.display()))?;
    let mode: ScheduleMode = args.mode.parse()?;
    let seed = match std::env::var(dgcn::config::SEED_ENV) {
        Ok(s) => s.trim().parse().with_context(|| format!("{} = {s:?}", dgcn::config::SEED_ENV))?,
        Err(_) => args.seed,
    };
    let s = build_schedule(&table, args.m.unwrap_or(table.m), mode, seed)?;
    s.write_json(&args.out)?;
    let sizes: Vec<usize> = s.stages.iter().map(Vec::len).collect();
    println!("{} stages with sizes {sizes:?}", sizes.len());
    Ok(())
}

pub fn ablate(args: &ConfigArgs, variants: &[String]) -> Result<()> {
    let cfg = resolve(args)?;
    let variants: Vec<AblationVariant> = if variants.is_empty() {
        AblationVariant::default_set()
    } else if variants.len() == 1 && variants[0] == "table" {
        AblationVariant::table()
    } else {
        variants.iter().map(|v| v.parse()).collect::<dgcn::Result<_>>()?
    };
    cfg.persist(&cfg.out_dir)?;
    let corpus = exp::build_corpus(&cfg)?;
    let report = exp::ablate(&cfg, &corpus, &variants)?;
    report.write(&cfg.out_dir)?;
    for (v, m) in report.variants.iter().zip(&report.medians) {
        println!("{v:40} BLEU-1 {:.4} BLEU-4 {:.4} CIDEr {:.4}", m.bleu1, m.bleu4, m.cider);
    }
    Ok(())
}

fn parse_values(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?);
        if a > b {
            bail!("empty range {s:?}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|v| v.trim().parse::<usize>().with_context(|| format!("bad value {v:?}"))).collect()
}

pub fn sweep(args: &ConfigArgs, param: &str, values: &str) -> Result<()> {
    let cfg = resolve(args)?;
    let param: SweepParam = param.parse()?;
    let values = parse_values(values)?;
    cfg.persist(&cfg.out_dir)?;
    let corpus = exp::build_corpus(&cfg)?;
    let rows = exp::sweep(&cfg, &corpus, param, &values)?;
    let path = cfg.out_dir.join(format!("sweep_{param}.csv"));
    exp::write_sweep(&path, param, &rows)?;
    for r in &rows {
        println!("{param} = {:2}  BLEU-1 {:.4}  CIDEr {:.4}", r.value, r.test.bleu1, r.test.cider);
    }
    println!("wrote {}", path.display());
    Ok(())
}
