use serde::{Deserialize, Serialize};

use super::geometry::{classify_relation, BBox, Relation, RelationPolicy};
use crate::error::{Error, Result};

/// One detected region: feature vector, box and detector confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub feature: Vec<f32>,
    pub bbox: BBox,
    pub confidence: f32,
}

/// Directed, labelled edge: `src` is `relation` with respect to `dst`, and
/// messages flow from `src` into `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGraph {
    num_nodes: usize,
    edges: Vec<Edge>,
}

impl SpatialGraph {
    /// Builds a graph from explicit edges; rejects duplicate ordered pairs
    /// and `None`-labelled edges.
    pub fn from_edges(num_nodes: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = vec![false; num_nodes * num_nodes];
        for e in &edges {
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(Error::index("SpatialGraph", format!("edge {e:?} outside {num_nodes} nodes")));
            }
            if e.relation == Relation::None {
                return Err(Error::Geometry("edges cannot carry the `none` relation".into()));
            }
            if (e.relation == Relation::Identity) != (e.src == e.dst) {
                return Err(Error::Geometry(format!("identity relation must label exactly the self-loops: {e:?}")));
            }
            let slot = &mut seen[e.src * num_nodes + e.dst];
            if *slot {
                return Err(Error::Geometry(format!("duplicate edge {} -> {}", e.src, e.dst)));
            }
            *slot = true;
        }
        Ok(SpatialGraph { num_nodes, edges })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges grouped by relation weight slot: `(sources, destinations)`.
    pub fn by_relation(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut groups = vec![(Vec::new(), Vec::new()); super::NUM_RELATIONS];
        for e in &self.edges {
            if let Some(i) = e.relation.index() {
                groups[i].0.push(e.src);
                groups[i].1.push(e.dst);
            }
        }
        groups
    }
}

/// Connects every ordered region pair whose relation is not `None`, plus
/// an identity self-loop per node when the policy asks for it.
pub fn build_spatial_graph(regions: &[Region], policy: &RelationPolicy, max_regions: usize) -> Result<SpatialGraph> {
    let boxes: Vec<BBox> = regions.iter().map(|r| r.bbox).collect();
    build_spatial_graph_from_boxes(&boxes, policy, max_regions)
}

pub fn build_spatial_graph_from_boxes(boxes: &[BBox], policy: &RelationPolicy, max_regions: usize) -> Result<SpatialGraph> {
    if boxes.is_empty() {
        return Err(Error::Geometry("an image needs at least one region".into()));
    }
    if boxes.len() > max_regions {
        return Err(Error::Geometry(format!("{} regions exceed the configured maximum of {max_regions}", boxes.len())));
    }
    for b in boxes {
        b.validate()?;
    }
    let (w, h) = policy.image_size.unwrap_or_else(|| boxes.iter().fold((0.0f64, 0.0f64), |(w, h), b| (w.max(b.x_max as f64), h.max(b.y_max as f64))));
    let diag = w.hypot(h);
    let mut edges = Vec::new();
    for (i, a) in boxes.iter().enumerate() {
        for (j, b) in boxes.iter().enumerate() {
            if i == j {
                if policy.self_loops {
                    edges.push(Edge { src: i, dst: i, relation: Relation::Identity });
                }
                continue;
            }
            let relation = classify_relation(a, b, policy.iou_threshold, policy.distance_fraction, diag)?;
            if relation != Relation::None {
                edges.push(Edge { src: i, dst: j, relation });
            }
        }
    }
    SpatialGraph::from_edges(boxes.len(), edges)
}
