//! JSON-lines caption sidecar: one `{"id", "refs", "split"}` object per line.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dgrf::{read_dgrf_file, write_dgrf_file, FeatureRecord};
use super::sample::{SceneSample, Split};
use crate::error::{Error, Result};
use crate::metrics::tokenize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionEntry {
    pub id: u64,
    pub refs: Vec<String>,
    #[serde(default)]
    pub split: Split,
}

pub fn write_sidecar<W: Write>(mut w: W, entries: &[CaptionEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sidecar<R: BufRead>(r: R) -> Result<Vec<CaptionEntry>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: CaptionEntry = serde_json::from_str(&line).map_err(|err| Error::Config { field: format!("sidecar line {}", n + 1), detail: err.to_string() })?;
        out.push(e);
    }
    Ok(out)
}

/// Writes `features.dgrf` and `captions.jsonl` into `dir`.
pub fn save_corpus(dir: &Path, samples: &[SceneSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let records: Vec<FeatureRecord> = samples.iter().map(|s| FeatureRecord { id: s.id, regions: s.regions.clone() }).collect();
    write_dgrf_file(&dir.join("features.dgrf"), &records)?;
    let entries: Vec<CaptionEntry> =
        samples.iter().map(|s| CaptionEntry { id: s.id, refs: s.references.iter().map(|r| r.join(" ")).collect(), split: s.split }).collect();
    let mut f = fs::File::create(dir.join("captions.jsonl"))?;
    write_sidecar(&mut f, &entries)?;
    Ok(())
}

/// Reads a feature file and joins captions from an optional sidecar.
/// Images without a sidecar entry keep no references and the train split.
pub fn load_region_features(features: &Path, sidecar: Option<&Path>, max_regions: usize) -> Result<Vec<SceneSample>> {
    let records = read_dgrf_file(features, max_regions)?;
    let mut captions: HashMap<u64, CaptionEntry> = HashMap::new();
    if let Some(p) = sidecar {
        for e in read_sidecar(BufReader::new(fs::File::open(p)?))? {
            let id = e.id;
            if captions.insert(id, e).is_some() {
                return Err(Error::config("sidecar", format!("duplicate id {id}")));
            }
        }
    }
    Ok(records
        .into_iter()
        .map(|r| {
            let (references, split) = match captions.remove(&r.id) {
                Some(e) => (e.refs.iter().map(|s| tokenize(s)).collect(), e.split),
                None => (Vec::new(), Split::Train),
            };
            SceneSample { id: r.id, regions: r.regions, references, split }
        })
        .collect())
}

pub fn load_corpus(dir: &Path, max_regions: usize) -> Result<Vec<SceneSample>> {
    load_region_features(&dir.join("features.dgrf"), Some(&dir.join("captions.jsonl")), max_regions)
}
