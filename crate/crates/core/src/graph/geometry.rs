use std::f64::consts::FRAC_PI_4;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x_min, y_min, x_max, y_max)` in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BBox {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Geometry(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) as f64 * (self.y_max - self.y_min) as f64
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min as f64 + self.x_max as f64) / 2.0, (self.y_min as f64 + self.y_max as f64) / 2.0)
    }

    /// `self` lies within `other` and the two boxes differ.
    pub fn strictly_inside(&self, other: &BBox) -> bool {
        self != other && self.x_min >= other.x_min && self.y_min >= other.y_min && self.x_max <= other.x_max && self.y_max <= other.y_max
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) as f64 - self.x_min.max(other.x_min) as f64).max(0.0);
        let h = (self.y_max.min(other.y_max) as f64 - self.y_min.max(other.y_min) as f64).max(0.0);
        w * h
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Spatial relation of an ordered region pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Identity,
    Inside,
    Cover,
    Overlap,
    /// Angular sector `k` (45 degrees each, counter-clockwise from +x).
    Direction(u8),
    None,
}

/// Relation classes that carry an edge (everything except `None`).
pub const NUM_RELATIONS: usize = 12;

impl Relation {
    /// Weight slot for edge-carrying classes.
    pub fn index(self) -> Option<usize> {
        match self {
            Relation::Identity => Some(0),
            Relation::Inside => Some(1),
            Relation::Cover => Some(2),
            Relation::Overlap => Some(3),
            Relation::Direction(k) => Some(4 + k as usize),
            Relation::None => None,
        }
    }

    pub fn from_index(i: usize) -> Option<Relation> {
        match i {
            0 => Some(Relation::Identity),
            1 => Some(Relation::Inside),
            2 => Some(Relation::Cover),
            3 => Some(Relation::Overlap),
            4..=11 => Some(Relation::Direction((i - 4) as u8)),
            _ => None,
        }
    }

    /// Whether the reversed pair carries a different class.
    pub fn directed(self) -> bool {
        matches!(self, Relation::Inside | Relation::Cover | Relation::Direction(_))
    }

    pub fn label(self) -> String {
        match self {
            Relation::Identity => "identity".into(),
            Relation::Inside => "inside".into(),
            Relation::Cover => "cover".into(),
            Relation::Overlap => "overlap".into(),
            Relation::Direction(k) => format!("dir_{k}"),
            Relation::None => "none".into(),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationPolicy {
    pub iou_threshold: f64,
    /// Directional edges need centre distance <= this fraction of the image diagonal.
    pub distance_fraction: f64,
    /// `(width, height)`; when absent the extent of the regions is used.
    pub image_size: Option<(f64, f64)>,
    pub self_loops: bool,
}

impl Default for RelationPolicy {
    fn default() -> Self {
        RelationPolicy { iou_threshold: 0.5, distance_fraction: 0.5, image_size: None, self_loops: true }
    }
}

/// Classifies the relation of `a` with respect to `b`.
///
/// Order of tests: containment, IoU overlap, then the angular sector of
/// the vector from `a`'s centre to `b`'s centre when the centres are close
/// enough; anything else has no relation.
pub fn classify_relation(a: &BBox, b: &BBox, iou_threshold: f64, dist_threshold: f64, image_diag: f64) -> Result<Relation> {
    a.validate()?;
    b.validate()?;
    if a.strictly_inside(b) {
        return Ok(Relation::Inside);
    }
    if b.strictly_inside(a) {
        return Ok(Relation::Cover);
    }
    if iou(a, b) >= iou_threshold {
        return Ok(Relation::Overlap);
    }
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let (dx, dy) = (bx - ax, by - ay);
    if dx.hypot(dy) <= dist_threshold * image_diag {
        Ok(Relation::Direction(sector(dx, dy)))
    } else {
        Ok(Relation::None)
    }
}

fn sector(dx: f64, dy: f64) -> u8 {
    let mut angle = dy.atan2(dx);
    if angle < 0.0 {
        angle += 2.0 * std::f64::consts::PI;
    }
    ((angle / FRAC_PI_4).floor() as i64).clamp(0, 7) as u8
}
