//! Layered run configuration: profile defaults, a JSON file, `key=value`
//! overrides and the `DGCN_SEED` environment variable, in that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::curriculum::ScheduleMode;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::metrics::MetricSpec;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::transformer::DecodeOptions;

pub const SEED_ENV: &str = "DGCN_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `features.dgrf` and `captions.jsonl`; synthetic
    /// data is generated when absent.
    pub corpus_dir: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    /// Total synthetic samples, all splits included.
    pub samples: usize,
    pub val: usize,
    pub test: usize,
    pub split_seed: u64,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { corpus_dir: None, synthetic: SyntheticSpec::default(), samples: 2400, val: 200, test: 200, split_seed: 0, min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub enabled: bool,
    /// Number of shards, buckets and easy-to-hard stages.
    pub shards: usize,
    pub metric: MetricSpec,
    pub mode: ScheduleMode,
    /// Passes each shard model makes over its shard.
    pub shard_epochs: usize,
    pub epochs_per_stage: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig { enabled: true, shards: 8, metric: MetricSpec::default(), mode: ScheduleMode::Literal, shard_epochs: 4, epochs_per_stage: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub curriculum: CurriculumConfig,
    /// Passes over the training split when the curriculum is off.
    pub epochs: usize,
    pub decode: DecodeOptions,
    pub seed: u64,
    /// Seeds for repeated experiments; three consecutive seeds from `seed`
    /// when empty.
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: "full".into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            curriculum: CurriculumConfig::default(),
            epochs: 4,
            decode: DecodeOptions::default(),
            seed: 0,
            seeds: Vec::new(),
            workers: 1,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Small dimensions that train on a CPU in minutes.
    pub fn toy() -> Self {
        RunConfig {
            profile: "toy".into(),
            model: ModelConfig::toy(),
            train: TrainConfig { lr: 1e-3, ..Default::default() },
            curriculum: CurriculumConfig { shards: 4, ..Default::default() },
            out_dir: PathBuf::from("runs/toy"),
            ..Default::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(RunConfig::default()),
            "toy" => Ok(RunConfig::toy()),
            _ => Err(Error::config("profile", format!("unknown profile {name:?}; expected full or toy"))),
        }
    }

    /// Builds the resolved configuration. A `profile` key in the file or in
    /// the overrides picks the defaults that the rest is layered onto.
    pub fn resolve(file: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let file_value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(Error::config("config", "top level must be an object"));
                }
                v
            }
            None => Value::Object(Default::default()),
        };
        let parsed: Vec<(String, Value)> = overrides.iter().map(|o| parse_override(o)).collect::<Result<_>>()?;
        let profile = parsed
            .iter()
            .rev()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.clone())
            .or_else(|| file_value.get("profile").cloned())
            .unwrap_or(Value::String("full".into()));
        let profile = profile.as_str().ok_or_else(|| Error::config("profile", "must be a string"))?.to_string();
        let mut value = serde_json::to_value(RunConfig::profile(&profile)?)?;
        merge(&mut value, file_value);
        for (key, v) in parsed {
            set_path(&mut value, &key, v)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))?;
        if let Some(s) = env_seed {
            cfg.seed = s.trim().parse().map_err(|_| Error::config(SEED_ENV, format!("{s:?} is not an unsigned integer")))?;
        }
        cfg.data.synthetic.feature_dim = cfg.model.feature_dim;
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`RunConfig::resolve`] reading the seed override from the environment.
    pub fn resolve_env(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        RunConfig::resolve(file, overrides, std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..3).map(|i| self.seed.wrapping_add(i)).collect()
        } else {
            self.seeds.clone()
        }
    }

    /// Checks every field that can be checked before data is loaded.
    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(crate::data::vocab::RESERVED.len() + 1);
        model.validate().map_err(|e| prefix("model", e))?;
        self.train.validate().map_err(|e| prefix("train", e))?;
        if self.data.corpus_dir.is_none() {
            self.data.synthetic.validate().map_err(|e| prefix("data.synthetic", e))?;
            if self.data.val + self.data.test >= self.data.samples {
                return Err(Error::config(
                    "data.samples",
                    format!("{} samples leave no training split after {} val and {} test", self.data.samples, self.data.val, self.data.test),
                ));
            }
        }
        if self.data.min_count == 0 {
            return Err(Error::config("data.min_count", "must be positive"));
        }
        if self.curriculum.enabled && self.curriculum.shards < 2 {
            return Err(Error::config("curriculum.shards", "cross-review needs at least 2 shards"));
        }
        if self.curriculum.shard_epochs == 0 {
            return Err(Error::config("curriculum.shard_epochs", "must be positive"));
        }
        if self.curriculum.epochs_per_stage == 0 {
            return Err(Error::config("curriculum.epochs_per_stage", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.decode.beam_width == 0 {
            return Err(Error::config("decode.beam_width", "must be positive"));
        }
        if self.decode.max_len < 2 {
            return Err(Error::config("decode.max_len", "must leave room for one token after <bos>"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be positive"));
        }
        Ok(())
    }

    /// Writes the resolved configuration as `config.json` in `dir`.
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, detail } => Error::Config { field: format!("{section}.{field}"), detail },
        other => other,
    }
}

/// `a.b.c=value`; the value is read as JSON and falls back to a string.
fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(s, "empty key"));
    }
    let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), v))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| Error::config(key, format!("{} is not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(Error::config(key, "unknown field"));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        cur = obj.get_mut(*part).unwrap();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Ok(())
}
