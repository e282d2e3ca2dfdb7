//! Optimisation, evaluation and model persistence.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Block, Checkpoint};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, BleuOptions, CaptionScores};
use crate::model::{CaptionModel, ModelConfig, Prepared};
use crate::nn::Session;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transformer::{CaptionState, DecodeOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Fraction of the planned steps over which the rate ramps up linearly.
    pub warmup_frac: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 3e-4, warmup_frac: 0.05, batch_size: 16, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: Some(1.0), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::config("warmup_frac", "must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta", "Adam betas must lie in [0, 1)"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::config("grad_clip", "must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(shapes: impl Iterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = shapes.map(|t| (vec![T::zero(); t.numel()], vec![T::zero(); t.numel()])).unzip();
        Adam { m, v }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub steps: u64,
    pub samples: usize,
    pub mean_loss: f64,
}

pub struct Trainer<T: Scalar> {
    pub model: CaptionModel<T>,
    pub config: TrainConfig,
    pub adam: Adam<T>,
    /// Optimiser steps taken so far.
    pub step: u64,
    /// Planned total, used only to size the warm-up.
    pub total_steps: u64,
    rng: ChaCha8Rng,
    /// Ids of every sample used for a gradient, when auditing is on.
    pub audit: Option<BTreeSet<u64>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: CaptionModel<T>, config: TrainConfig, total_steps: u64) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(model.params.iter().map(|(_, t)| t));
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { model, config, adam, step: 0, total_steps, rng, audit: None })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = (self.config.warmup_frac * self.total_steps as f64).ceil() as u64;
        if warm == 0 || step >= warm {
            self.config.lr
        } else {
            self.config.lr * (step + 1) as f64 / warm as f64
        }
    }

    /// One optimiser step on the mean loss of `batch` (indices into `data`).
    pub fn train_step(&mut self, data: &[Prepared<T>], batch: &[usize]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("batch", "empty batch"));
        }
        self.model.params.zero_grads();
        let scale = T::of(1.0 / batch.len() as f64);
        let mut total = 0.0;
        for (pos, &i) in batch.iter().enumerate() {
            let sample = data.get(i).ok_or_else(|| Error::index("train_step", format!("sample {i} of {}", data.len())))?;
            if sample.targets.is_empty() {
                return Err(Error::config("references", format!("sample {} has no reference captions", sample.id)));
            }
            let target = &sample.targets[self.rng.random_range(0..sample.targets.len())];
            if let Some(a) = self.audit.as_mut() {
                a.insert(sample.id);
            }
            let dropout_seed = self.config.seed ^ (self.step << 20) ^ pos as u64;
            let mut s = Session::new(&self.model.params, true).with_dropout(self.model.config.dropout, dropout_seed);
            let loss = self.model.loss(&mut s, sample, target)?;
            let lv = s.tape.item(loss).as_f64();
            if !lv.is_finite() {
                return Err(Error::Divergence { context: format!("sample {}", sample.id), step: self.step, loss: lv });
            }
            total += lv;
            let loss = s.tape.scale(loss, scale)?;
            let grads = s.backward(loss)?;
            self.model.params.accumulate(&grads)?;
        }
        self.apply_update()?;
        Ok(total / batch.len() as f64)
    }

    fn apply_update(&mut self) -> Result<()> {
        let c = &self.config;
        let mut norm2 = 0.0f64;
        for (_, p) in self.model.params.iter() {
            if let Some(g) = p.grad() {
                norm2 += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        }
        if !norm2.is_finite() {
            return Err(Error::Divergence { context: "gradient norm".into(), step: self.step, loss: norm2 });
        }
        let clip = match c.grad_clip {
            Some(max) if norm2.sqrt() > max => max / norm2.sqrt(),
            _ => 1.0,
        };
        let t = self.step as i32 + 1;
        let lr = self.lr_at(self.step);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2, eps) = (T::of(c.beta1), T::of(c.beta2), T::of(c.eps));
        let (one, clip, step_size, bc2_sqrt) = (T::one(), T::of(clip), T::of(lr / bc1), T::of(bc2.sqrt()));
        for (k, (_, p)) in self.model.params.iter_mut().enumerate() {
            let Some(g) = p.take_grad() else { continue };
            let (m, v) = (&mut self.adam.m[k], &mut self.adam.v[k]);
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g * clip;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        }
        self.step += 1;
        Ok(())
    }

    /// One pass over `indices` in a fresh shuffled order, after rebuilding
    /// the neighbour bank from all of `data`.
    pub fn epoch(&mut self, data: &[Prepared<T>], indices: &[usize]) -> Result<EpochStats> {
        self.run(data, indices, None)
    }

    /// Exactly `steps` optimiser steps, cycling reshuffled epochs over
    /// `indices`.
    pub fn train_steps(&mut self, data: &[Prepared<T>], indices: &[usize], steps: u64) -> Result<EpochStats> {
        let mut done = EpochStats::default();
        let mut loss_sum = 0.0;
        while done.steps < steps {
            let e = self.run(data, indices, Some(steps - done.steps))?;
            loss_sum += e.mean_loss * e.steps as f64;
            done.steps += e.steps;
            done.samples += e.samples;
        }
        done.mean_loss = if done.steps > 0 { loss_sum / done.steps as f64 } else { f64::NAN };
        Ok(done)
    }

    fn run(&mut self, data: &[Prepared<T>], indices: &[usize], limit: Option<u64>) -> Result<EpochStats> {
        if indices.is_empty() {
            return Err(Error::config("indices", "nothing to train on"));
        }
        self.model.refresh_bank(data)?;
        let mut order = indices.to_vec();
        order.shuffle(&mut self.rng);
        let mut stats = EpochStats::default();
        let mut loss_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            if limit.is_some_and(|l| stats.steps >= l) {
                break;
            }
            loss_sum += self.train_step(data, batch)?;
            stats.steps += 1;
            stats.samples += batch.len();
        }
        stats.mean_loss = loss_sum / stats.steps as f64;
        Ok(stats)
    }

    /// Model, vocabulary, optimiser state and step counter.
    pub fn to_checkpoint(&self, vocab: &Vocabulary) -> Result<Checkpoint> {
        let mut ck = model_checkpoint(&self.model, vocab)?;
        ck.config["train"] = serde_json::to_value(&self.config)?;
        ck.config["step"] = self.step.into();
        ck.config["total_steps"] = self.total_steps.into();
        for (k, (name, p)) in self.model.params.iter().enumerate() {
            for (tag, buf) in [("adam.m", &self.adam.m[k]), ("adam.v", &self.adam.v[k])] {
                ck.blocks.push(Block { name: format!("{tag}/{name}"), shape: p.shape().to_vec(), data: buf.iter().map(|v| v.as_f32()).collect() });
            }
        }
        Ok(ck)
    }

    /// Restores a trainer; the shuffling stream is re-derived from the seed
    /// and the step counter.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vocabulary)> {
        let (model, vocab) = load_model(ck)?;
        let config: TrainConfig = serde_json::from_value(ck.config.get("train").cloned().ok_or_else(|| Error::Checkpoint("no training state".into()))?)?;
        let step = ck.config.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
        let total = ck.config.get("total_steps").and_then(|v| v.as_u64()).unwrap_or(step);
        let mut tr = Trainer::new(model, config, total)?;
        tr.step = step;
        tr.rng = ChaCha8Rng::seed_from_u64(tr.config.seed ^ step.rotate_left(32));
        for (k, (name, _)) in tr.model.params.iter().enumerate() {
            for (tag, buf) in [("adam.m", &mut tr.adam.m[k]), ("adam.v", &mut tr.adam.v[k])] {
                let b = ck.block(&format!("{tag}/{name}")).ok_or_else(|| Error::Checkpoint(format!("missing {tag}/{name}")))?;
                if b.data.len() != buf.len() {
                    return Err(Error::Checkpoint(format!("{tag}/{name} has {} values, expected {}", b.data.len(), buf.len())));
                }
                *buf = b.data.iter().map(|&v| T::of(v as f64)).collect();
            }
        }
        Ok((tr, vocab))
    }
}

/// Parameters, neighbour bank, configuration and vocabulary.
pub fn model_checkpoint<T: Scalar>(model: &CaptionModel<T>, vocab: &Vocabulary) -> Result<Checkpoint> {
    let mut blocks: Vec<Block> = model
        .params
        .iter()
        .map(|(n, t)| Block { name: format!("param/{n}"), shape: t.shape().to_vec(), data: t.data().iter().map(|v| v.as_f32()).collect() })
        .collect();
    let bank: Vec<f32> = (0..model.bank.len()).flat_map(|r| model.bank.embedding(r).iter().map(|v| v.as_f32())).collect();
    blocks.push(Block { name: "bank".into(), shape: vec![model.bank.len(), model.bank.dim()], data: bank });
    let config = serde_json::json!({
        "model": model.config,
        "vocab": vocab,
        "bank_ids": model.bank.ids(),
    });
    Ok(Checkpoint { config, blocks })
}

pub fn load_model<T: Scalar>(ck: &Checkpoint) -> Result<(CaptionModel<T>, Vocabulary)> {
    let field = |k: &str| ck.config.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("config echo lacks {k:?}")));
    let config: ModelConfig = serde_json::from_value(field("model")?)?;
    let vocab: Vocabulary = serde_json::from_value(field("vocab")?)?;
    let ids: Vec<u64> = serde_json::from_value(field("bank_ids")?)?;
    let mut model = CaptionModel::<T>::new(config, 0)?;
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let b = ck.block(&format!("param/{name}")).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        let t = Tensor::new(b.shape.clone(), b.data.iter().map(|&v| T::of(v as f64)).collect())?;
        model.params.assign(&name, t).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    }
    let bank = ck.block("bank").ok_or_else(|| Error::Checkpoint("missing bank".into()))?;
    let dim = model.bank.dim();
    if bank.data.len() != ids.len() * dim {
        return Err(Error::Checkpoint(format!("bank holds {} values for {} ids of dim {dim}", bank.data.len(), ids.len())));
    }
    for (r, id) in ids.into_iter().enumerate() {
        let row: Vec<T> = bank.data[r * dim..(r + 1) * dim].iter().map(|&v| T::of(v as f64)).collect();
        model.bank.push(id, &row)?;
    }
    Ok((model, vocab))
}

/// Mean teacher-forced loss over every reference of the samples at
/// `indices`, without dropout.
pub fn dataset_loss<T: Scalar>(model: &CaptionModel<T>, data: &[Prepared<T>], indices: &[usize]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for &i in indices {
        let sample = data.get(i).ok_or_else(|| Error::index("dataset_loss", format!("sample {i} of {}", data.len())))?;
        for target in &sample.targets {
            let mut s = Session::new(&model.params, false);
            let loss = model.loss(&mut s, sample, target)?;
            sum += s.tape.item(loss).as_f64();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::config("indices", "no references to score"));
    }
    Ok(sum / count as f64)
}

pub fn caption_all<T: Scalar>(model: &CaptionModel<T>, data: &[Prepared<T>], opts: &DecodeOptions) -> Result<Vec<CaptionState>> {
    data.iter().map(|p| model.caption(p, opts)).collect()
}

/// Decoded captions and corpus-level scores on `data`.
pub fn evaluate<T: Scalar>(
    model: &CaptionModel<T>,
    vocab: &Vocabulary,
    data: &[Prepared<T>],
    opts: &DecodeOptions,
) -> Result<(CaptionScores, Vec<Vec<String>>)> {
    let captions: Vec<Vec<String>> = caption_all(model, data, opts)?.iter().map(|c| vocab.decode_caption(&c.tokens)).collect::<Result<_>>()?;
    let refs: Vec<Vec<Vec<String>>> = data.iter().map(|p| p.references.clone()).collect();
    Ok((evaluate_corpus(&captions, &refs, BleuOptions::default())?, captions))
}

/// One row of a training log: an epoch of plain training or one curriculum
/// stage, followed by a validation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// `epoch` or `stage`.
    pub phase: String,
    pub index: usize,
    pub samples: usize,
    pub steps: u64,
    /// Optimiser step counter after the row.
    pub step: u64,
    pub train_loss: f64,
    pub val: CaptionScores,
}

pub const LOG_HEADER: [&str; 12] = ["phase", "index", "samples", "steps", "step", "train_loss", "bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider"];

pub fn write_log(path: &std::path::Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOG_HEADER)?;
    for r in rows {
        let mut rec = vec![r.phase.clone(), r.index.to_string(), r.samples.to_string(), r.steps.to_string(), r.step.to_string(), format!("{:?}", r.train_loss)];
        rec.extend(r.val.values().iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &std::path::Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(LOG_HEADER) {
        return Err(Error::config("log", format!("unexpected header in {}", path.display())));
    }
    let bad = |what: &str, s: &str| Error::config("log", format!("bad {what} {s:?}"));
    r.records()
        .map(|rec| {
            let rec = rec?;
            let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(LOG_HEADER[i], &rec[i]));
            let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(LOG_HEADER[i], &rec[i]));
            let mut vals = [0.0; 6];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = float(6 + k)?;
            }
            Ok(LogRow {
                phase: rec[0].to_string(),
                index: int(1)? as usize,
                samples: int(2)? as usize,
                steps: int(3)?,
                step: int(4)?,
                train_loss: float(5)?,
                val: CaptionScores::from_values(vals),
            })
        })
        .collect()
}
