//! Region-feature container.
//!
//! ```text
//! "DGRF" | u32 version | u32 n_images
//! per image: u64 id | u32 O | u32 C | O x 4 f32 boxes | O f32 confidences | O x C f32 features
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{BBox, Region};

pub const DGRF_MAGIC: &[u8; 4] = b"DGRF";
pub const DGRF_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: u64,
    pub regions: Vec<Region>,
}

pub fn write_dgrf<W: Write>(mut w: W, records: &[FeatureRecord]) -> Result<()> {
    w.write_all(DGRF_MAGIC)?;
    w.write_all(&DGRF_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(records.len()).map_err(|_| Error::config("n_images", "exceeds u32"))?.to_le_bytes())?;
    for rec in records {
        let c = rec.regions.first().map_or(0, |r| r.feature.len());
        if rec.regions.iter().any(|r| r.feature.len() != c) {
            return Err(Error::shape("write_dgrf", format!("image {} mixes feature widths", rec.id)));
        }
        let mut buf = Vec::with_capacity(16 + rec.regions.len() * (20 + 4 * c));
        buf.extend_from_slice(&rec.id.to_le_bytes());
        buf.extend_from_slice(&(rec.regions.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(c as u32).to_le_bytes());
        for r in &rec.regions {
            for v in [r.bbox.x_min, r.bbox.y_min, r.bbox.x_max, r.bbox.y_max] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for r in &rec.regions {
            buf.extend_from_slice(&r.confidence.to_le_bytes());
        }
        for r in &rec.regions {
            for v in &r.feature {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_dgrf_file(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_dgrf(&mut buf, records)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            detail: format!("truncated reading {what}: need {n} bytes, file has {} bytes total ({} remaining)", self.bytes.len(), self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format { offset: start as u64, detail: format!("{what} size overflows") })?, what)?;
        let vals: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format { offset: (start + 4 * i) as u64, detail: format!("non-finite value {} in {what}", vals[i]) });
        }
        Ok(vals)
    }
}

/// Parses a container. A zero-length input is an empty corpus.
pub fn read_dgrf(bytes: &[u8], max_regions: usize) -> Result<Vec<FeatureRecord>> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != DGRF_MAGIC {
        return Err(Error::Format { offset: 0, detail: format!("bad magic {:?}, expected \"DGRF\"", &bytes[..4]) });
    }
    let version = cur.u32("version")?;
    if version != DGRF_VERSION {
        return Err(Error::Format { offset: 4, detail: format!("unsupported version {version}") });
    }
    let n = cur.u32("image count")? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let at = cur.pos as u64;
        let id = cur.u64("image id")?;
        let o = cur.u32("region count")? as usize;
        let c = cur.u32("feature width")? as usize;
        if o == 0 || o > max_regions {
            return Err(Error::Format { offset: at + 8, detail: format!("image {id} has {o} regions, allowed 1..={max_regions}") });
        }
        let box_at = cur.pos as u64;
        let boxes = cur.f32s(o * 4, "boxes")?;
        let confidences = cur.f32s(o, "confidences")?;
        let features = cur.f32s(o * c, "features")?;
        let mut regions = Vec::with_capacity(o);
        for i in 0..o {
            let b = &boxes[4 * i..4 * i + 4];
            let bbox = BBox::new(b[0], b[1], b[2], b[3]);
            bbox.validate().map_err(|e| Error::Format { offset: box_at + 16 * i as u64, detail: format!("image {id} region {i}: {e}") })?;
            regions.push(Region { feature: features[i * c..(i + 1) * c].to_vec(), bbox, confidence: confidences[i] });
        }
        out.push(FeatureRecord { id, regions });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format { offset: cur.pos as u64, detail: format!("{} trailing bytes after {n} images", bytes.len() - cur.pos) });
    }
    Ok(out)
}

pub fn read_dgrf_file(path: &Path, max_regions: usize) -> Result<Vec<FeatureRecord>> {
    read_dgrf(&fs::read(path)?, max_regions)
}
