//! Versioned binary parameter container.
//!
//! ```text
//! "DGCN" | u32 version | u32 config length | config JSON
//! u32 block count
//! per block: u32 name length | name | u32 rank | rank x u32 extents | f32 values
//! ```
//! Little-endian throughout.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DGCN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub blocks: Vec<Block>,
}

fn u32_of(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| Error::Checkpoint(format!("{what} {v} exceeds u32")))
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&u32_of(cfg.len(), "config length")?);
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&u32_of(self.blocks.len(), "block count")?);
        for b in &self.blocks {
            if b.shape.iter().product::<usize>() != b.data.len() {
                return Err(Error::Checkpoint(format!("block {} has shape {:?} but {} values", b.name, b.shape, b.data.len())));
            }
            out.extend_from_slice(&u32_of(b.name.len(), "name length")?);
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&u32_of(b.shape.len(), "rank")?);
            for &e in &b.shape {
                out.extend_from_slice(&u32_of(e, "extent")?);
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Format {
                offset: pos as u64,
                detail: format!("checkpoint truncated reading {what}: need {n} bytes, {} remain", bytes.len() - pos),
            })?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, detail: "bad magic, expected \"DGCN\"".into() });
        }
        let rd = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let version = rd(take(4, "version")?);
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Format { offset: 4, detail: format!("unsupported checkpoint version {version}") });
        }
        let n = rd(take(4, "config length")?);
        let config = serde_json::from_slice(take(n, "config")?)?;
        let count = rd(take(4, "block count")?);
        let mut blocks = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = rd(take(4, "name length")?);
            let name = String::from_utf8(take(n, "name")?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rank = rd(take(4, "rank")?);
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(rd(take(4, "extent")?));
            }
            let numel: usize = shape.iter().product();
            let raw = take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint(format!("block {name} too large")))?, "values")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            blocks.push(Block { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(Error::Format { offset: pos as u64, detail: "trailing bytes after last block".into() });
        }
        Ok(Checkpoint { config, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
