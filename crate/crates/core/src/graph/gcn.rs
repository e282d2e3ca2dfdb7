//! Object-level and image-level graph convolutions and their fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Relation, NUM_RELATIONS};
use super::knn::ImageGraph;
use super::spatial::SpatialGraph;
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => s.tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// One affine map per relation class. Weights are stored `C x d_g` so that
/// row-vector features multiply on the left.
#[derive(Clone, Debug)]
pub struct ObjectGcnParams {
    pub relations: Vec<Linear>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl ObjectGcnParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let relations = (0..NUM_RELATIONS)
            .map(|i| {
                let rel = Relation::from_index(i).expect("relation slot");
                Linear::new(store, &format!("{prefix}.{}", rel.label()), in_dim, out_dim, rng)
            })
            .collect();
        ObjectGcnParams { relations, in_dim, out_dim, activation: Activation::Relu }
    }
}

/// `v_i' = act( sum over edges (j -> i, r) of  v_j W_r + b_r )`
pub fn object_gcn_forward<T: Scalar>(s: &mut Session<'_, T>, graph: &SpatialGraph, features: Var, params: &ObjectGcnParams) -> Result<Var> {
    let shape = s.tape.shape(features).to_vec();
    if shape != [graph.num_nodes(), params.in_dim] {
        return Err(Error::shape("object_gcn_forward", format!("features {shape:?} vs {} nodes x {} dims", graph.num_nodes(), params.in_dim)));
    }
    let n = graph.num_nodes();
    let mut total: Option<Var> = None;
    for (slot, (srcs, dsts)) in graph.by_relation().into_iter().enumerate() {
        if srcs.is_empty() {
            continue;
        }
        let sent = s.tape.gather_rows(features, &srcs)?;
        let messages = params.relations[slot].forward(s, sent)?;
        let received = s.tape.scatter_add_rows(messages, &dsts, n)?;
        total = Some(match total {
            Some(t) => s.tape.add(t, received)?,
            None => received,
        });
    }
    let summed = match total {
        Some(t) => t,
        None => s.tape.constant(Tensor::zeros([n, params.out_dim])),
    };
    params.activation.apply(s, summed)
}

/// Mean over regions: `O x d -> d`.
pub fn pool_image<T: Scalar>(s: &mut Session<'_, T>, v_obj: Var) -> Result<Var> {
    if s.tape.shape(v_obj).first().copied().unwrap_or(0) == 0 {
        return Err(Error::shape("pool_image", "need at least one region"));
    }
    s.tape.mean(v_obj, 0)
}

#[derive(Clone, Debug)]
pub struct ImageGcnParams {
    pub linear: Linear,
    pub dim: usize,
    pub activation: Activation,
    pub include_center: bool,
}

impl ImageGcnParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, dim: usize, rng: &mut R) -> Self {
        ImageGcnParams { linear: Linear::new(store, prefix, dim, dim, rng), dim, activation: Activation::Relu, include_center: true }
    }
}

/// `u_j = act( sum over {centre} ∪ neighbours of  v W + b )`.
///
/// `center` is the live (differentiable) pooled embedding of the image;
/// neighbour embeddings enter as constants.
pub fn image_gcn_forward<T: Scalar>(s: &mut Session<'_, T>, center: Var, graph: &ImageGraph<T>, params: &ImageGcnParams) -> Result<Var> {
    let d = params.dim;
    if s.tape.shape(center) != [d] {
        return Err(Error::shape("image_gcn_forward", format!("centre {:?} vs dim {d}", s.tape.shape(center))));
    }
    let mut rows = Vec::with_capacity(graph.neighbors.len() + 1);
    if params.include_center {
        rows.push(s.tape.reshape(center, &[1, d])?);
    }
    if !graph.neighbors.is_empty() {
        let mut data = Vec::with_capacity(graph.neighbors.len() * d);
        for nb in &graph.neighbors {
            if nb.embedding.len() != d {
                return Err(Error::shape("image_gcn_forward", format!("neighbour {} has dim {}", nb.id, nb.embedding.len())));
            }
            data.extend_from_slice(&nb.embedding);
        }
        rows.push(s.tape.constant(Tensor::new([graph.neighbors.len(), d], data)?));
    }
    if rows.is_empty() {
        return Err(Error::shape("image_gcn_forward", "empty neighbourhood without the centre"));
    }
    let stacked = if rows.len() == 1 { rows[0] } else { s.tape.concat(&rows, 0)? };
    let h = params.linear.forward(s, stacked)?;
    let summed = s.tape.sum_axis(h, 0)?;
    params.activation.apply(s, summed)
}

/// Appends the image-level vector to every region row: `O x d_a, d_b -> O x (d_a + d_b)`.
pub fn fuse<T: Scalar>(s: &mut Session<'_, T>, v_obj: Var, u_img: Var) -> Result<Var> {
    let rows = match s.tape.shape(v_obj) {
        [o, _] => *o,
        sh => return Err(Error::shape("fuse", format!("region matrix expected, got {sh:?}"))),
    };
    let tiled = s.tape.repeat_rows(u_img, rows)?;
    s.tape.concat(&[v_obj, tiled], 1)
}
