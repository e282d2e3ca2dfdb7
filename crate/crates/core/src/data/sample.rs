use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Region;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config("split", format!("unknown split {s:?}"))),
        }
    }
}

/// One image: its regions and tokenized reference captions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub id: u64,
    pub regions: Vec<Region>,
    pub references: Vec<Vec<String>>,
    pub split: Split,
}

impl SceneSample {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::config("regions", format!("sample {} has no regions", self.id)));
        }
        for r in &self.regions {
            r.bbox.validate()?;
            if r.feature.len() != feature_dim {
                return Err(Error::config("feature_dim", format!("sample {} has a {}-dim region, expected {feature_dim}", self.id, r.feature.len())));
            }
        }
        Ok(())
    }
}

/// Seeded assignment of `n_val` and `n_test` samples to the held-out
/// splits; everything else is training data.
pub fn assign_splits(samples: &mut [SceneSample], n_val: usize, n_test: usize, seed: u64) -> Result<()> {
    if n_val + n_test > samples.len() {
        return Err(Error::config("splits", format!("{n_val} val + {n_test} test exceed {} samples", samples.len())));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| samples[i].id);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (rank, &i) in order.iter().enumerate() {
        samples[i].split = if rank < n_val {
            Split::Val
        } else if rank < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(())
}

pub fn select(samples: &[SceneSample], split: Split) -> Vec<SceneSample> {
    samples.iter().filter(|s| s.split == split).cloned().collect()
}
