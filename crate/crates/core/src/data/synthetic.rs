//! Grid scenes of coloured shapes with template captions.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sample::{SceneSample, Split};
use crate::error::{Error, Result};
use crate::graph::{BBox, Region};

pub const RELATIONS: [&str; 4] = ["above", "below", "left of", "right of"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Cells per side of the placement grid.
    pub grid: usize,
    /// Side length of one grid cell in image units.
    pub cell: f32,
    pub shapes: Vec<String>,
    pub colors: Vec<String>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub max_references: usize,
    pub noise: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        SyntheticSpec {
            grid: 4,
            cell: 10.0,
            shapes: s(&["circle", "square", "triangle", "star", "cross", "diamond"]),
            colors: s(&["red", "green", "blue", "yellow", "purple", "orange"]),
            min_objects: 2,
            max_objects: 6,
            max_references: 5,
            noise: 0.1,
            feature_dim: 64,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn image_size(&self) -> (f64, f64) {
        let side = self.grid as f64 * self.cell as f64;
        (side, side)
    }

    pub fn validate(&self) -> Result<()> {
        let attr = self.shapes.len() + self.colors.len() + 4;
        if self.feature_dim < attr {
            return Err(Error::config("feature_dim", format!("{} cannot hold {attr} attribute dimensions", self.feature_dim)));
        }
        if self.min_objects < 2 || self.min_objects > self.max_objects {
            return Err(Error::config("objects", format!("need 2 <= min ({}) <= max ({})", self.min_objects, self.max_objects)));
        }
        if self.max_objects > self.grid * self.grid {
            return Err(Error::config("objects", format!("{} objects do not fit a {}x{} grid", self.max_objects, self.grid, self.grid)));
        }
        if self.shapes.is_empty() || self.colors.is_empty() || self.max_references == 0 {
            return Err(Error::config("inventory", "shapes, colours and references must be non-empty"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and non-negative"));
        }
        let words: Vec<&str> = RELATIONS.iter().flat_map(|r| r.split(' ')).chain(["a"]).collect();
        for w in self.shapes.iter().chain(&self.colors) {
            if w.is_empty() || w.contains(char::is_whitespace) || words.contains(&w.as_str()) || self.shapes.contains(w) && self.colors.contains(w) {
                return Err(Error::config("inventory", format!("attribute word {w:?} is ambiguous in the template grammar")));
            }
        }
        Ok(())
    }
}

/// One placed object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: usize,
    pub color: usize,
    pub bbox: BBox,
}

/// Spatial word for `a` relative to `b`, from their box centres (image
/// y grows downward). The dominant axis wins; vertical on a tie.
pub fn spatial_word(a: &BBox, b: &BBox) -> &'static str {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let (dx, dy) = (ax - bx, ay - by);
    if dy.abs() >= dx.abs() {
        if dy < 0.0 {
            "above"
        } else {
            "below"
        }
    } else if dx < 0.0 {
        "left of"
    } else {
        "right of"
    }
}

fn describe(spec: &SyntheticSpec, objs: &[SceneObject], i: usize, j: usize) -> String {
    let (a, b) = (&objs[i], &objs[j]);
    format!("a {} {} {} a {} {}", spec.colors[a.color], spec.shapes[a.shape], spatial_word(&a.bbox, &b.bbox), spec.colors[b.color], spec.shapes[b.shape])
}

/// `one-hot(shape) ++ one-hot(colour) ++ box / image size`, zero padded.
pub fn attribute_embedding(spec: &SyntheticSpec, obj: &SceneObject) -> Vec<f32> {
    let mut f = vec![0.0f32; spec.feature_dim];
    f[obj.shape] = 1.0;
    f[spec.shapes.len() + obj.color] = 1.0;
    let (w, h) = spec.image_size();
    let o = spec.shapes.len() + spec.colors.len();
    f[o] = (obj.bbox.x_min as f64 / w) as f32;
    f[o + 1] = (obj.bbox.y_min as f64 / h) as f32;
    f[o + 2] = (obj.bbox.x_max as f64 / w) as f32;
    f[o + 3] = (obj.bbox.y_max as f64 / h) as f32;
    f
}

/// Places 2..=max objects on distinct cells and writes 1..=max_references
/// distinct captions, each about a different ordered pair of objects.
pub fn generate_scene<R: Rng>(spec: &SyntheticSpec, id: u64, rng: &mut R) -> Result<(SceneSample, Vec<SceneObject>)> {
    let n = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut cells: Vec<usize> = (0..spec.grid * spec.grid).collect();
    cells.shuffle(rng);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::config("noise", e.to_string()))?;
    let mut objects = Vec::with_capacity(n);
    for &cell in &cells[..n] {
        let (gx, gy) = ((cell % spec.grid) as f32, (cell / spec.grid) as f32);
        let size = spec.cell * rng.random_range(0.5f32..0.9);
        let slack = spec.cell - size;
        let x0 = gx * spec.cell + rng.random_range(0.0..slack);
        let y0 = gy * spec.cell + rng.random_range(0.0..slack);
        objects.push(SceneObject {
            shape: rng.random_range(0..spec.shapes.len()),
            color: rng.random_range(0..spec.colors.len()),
            bbox: BBox::new(x0, y0, x0 + size, y0 + size),
        });
    }
    let regions = objects
        .iter()
        .map(|o| {
            let mut feature = attribute_embedding(spec, o);
            if spec.noise > 0.0 {
                for v in &mut feature {
                    *v += noise.sample(rng) as f32;
                }
            }
            Region { feature, bbox: o.bbox, confidence: rng.random_range(0.5f32..=1.0) }
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    pairs.shuffle(rng);
    let n_refs = rng.random_range(1..=spec.max_references);
    let mut references: Vec<Vec<String>> = Vec::with_capacity(n_refs);
    for &(i, j) in &pairs {
        if references.len() == n_refs {
            break;
        }
        let cap: Vec<String> = describe(spec, &objects, i, j).split(' ').map(str::to_string).collect();
        if !references.contains(&cap) {
            references.push(cap);
        }
    }
    Ok((SceneSample { id, regions, references, split: Split::Train }, objects))
}

/// `n` scenes with ids `0..n`, deterministic in `spec.seed`.
pub fn generate_corpus(spec: &SyntheticSpec, n: usize) -> Result<Vec<SceneSample>> {
    Ok(generate_corpus_with_objects(spec, n)?.into_iter().map(|(s, _)| s).collect())
}

pub fn generate_corpus_with_objects(spec: &SyntheticSpec, n: usize) -> Result<Vec<(SceneSample, Vec<SceneObject>)>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::config("n_samples", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..n as u64).map(|id| generate_scene(spec, id, &mut rng)).collect()
}

/// A caption read back through the template grammar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedCaption {
    pub subject: (usize, usize),
    pub relation: &'static str,
    pub object: (usize, usize),
}

/// Inverse of the caption template: `a <colour> <shape> <rel> a <colour> <shape>`.
pub fn parse_caption<S: AsRef<str>>(spec: &SyntheticSpec, tokens: &[S]) -> Option<ParsedCaption> {
    let t: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let pos = |list: &[String], w: &str| list.iter().position(|x| x == w);
    let np = |s: &[&str]| -> Option<(usize, usize)> {
        match s {
            ["a", c, sh] => Some((pos(&spec.colors, c)?, pos(&spec.shapes, sh)?)),
            _ => None,
        }
    };
    let subject = np(t.get(..3)?)?;
    let (relation, rest) = RELATIONS.iter().find_map(|r| {
        let words: Vec<&str> = r.split(' ').collect();
        (t.get(3..3 + words.len())? == words.as_slice()).then(|| (*r, &t[3 + words.len()..]))
    })?;
    Some(ParsedCaption { subject, relation, object: np(rest)? })
}

/// Whether some ordered pair of distinct objects realises the caption.
pub fn caption_matches_scene(parsed: &ParsedCaption, objects: &[SceneObject]) -> bool {
    objects.iter().enumerate().any(|(i, a)| {
        objects.iter().enumerate().any(|(j, b)| {
            i != j && (a.color, a.shape) == parsed.subject && (b.color, b.shape) == parsed.object && spatial_word(&a.bbox, &b.bbox) == parsed.relation
        })
    })
}

/// Picks one reference uniformly; used to draw a training target.
pub fn pick_reference<'s, R: Rng + ?Sized>(sample: &'s SceneSample, rng: &mut R) -> &'s [String] {
    sample.references.choose(rng).map(Vec::as_slice).unwrap_or(&[])
}
