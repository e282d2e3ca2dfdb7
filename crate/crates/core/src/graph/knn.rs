//! Brute-force nearest neighbours over pooled image embeddings.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pooled embeddings of a set of images, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBank<T> {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<T>,
}

impl<T: Scalar> ImageBank<T> {
    pub fn new(dim: usize) -> Self {
        ImageBank { dim, ids: Vec::new(), data: Vec::new() }
    }

    pub fn push(&mut self, id: u64, embedding: &[T]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::shape("ImageBank::push", format!("embedding of {} for bank of {}", embedding.len(), self.dim)));
        }
        self.ids.push(id);
        self.data.extend_from_slice(embedding);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn embedding(&self, row: usize) -> &[T] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn get(&self, id: u64) -> Option<&[T]> {
        self.position(id).map(|r| self.embedding(r))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor<T> {
    pub id: u64,
    /// Squared Euclidean distance to the centre.
    pub distance: T,
    pub embedding: Vec<T>,
}

/// Centre image and its nearest neighbours, closest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGraph<T> {
    pub center_id: u64,
    pub center: Vec<T>,
    pub neighbors: Vec<Neighbor<T>>,
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// The `k` bank entries closest to `query`, excluding `exclude`. Ties are
/// broken by ascending id.
pub fn knn_query<T: Scalar>(query: &[T], exclude: Option<u64>, bank: &ImageBank<T>, k: usize) -> Result<Vec<Neighbor<T>>> {
    if query.len() != bank.dim {
        return Err(Error::shape("knn", format!("query of {} against bank of {}", query.len(), bank.dim)));
    }
    let mut scored: Vec<(T, u64, usize)> =
        (0..bank.len()).filter(|&r| Some(bank.ids[r]) != exclude).map(|r| (squared_distance(query, bank.embedding(r)), bank.ids[r], r)).collect();
    let by_distance_then_id = |a: &(T, u64, usize), b: &(T, u64, usize)| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1));
    let take = k.min(scored.len());
    if take == 0 {
        return Ok(Vec::new());
    }
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, by_distance_then_id);
        scored.truncate(take);
    }
    scored.sort_by(by_distance_then_id);
    Ok(scored.into_iter().map(|(distance, id, r)| Neighbor { id, distance, embedding: bank.embedding(r).to_vec() }).collect())
}

/// Neighbourhood of a bank member; returns `min(k, |bank| - 1)` neighbours.
pub fn knn_select<T: Scalar>(query_id: u64, bank: &ImageBank<T>, k: usize) -> Result<ImageGraph<T>> {
    if k == 0 {
        return Err(Error::config("K", "must be at least 1"));
    }
    let center = bank.get(query_id).ok_or_else(|| Error::index("knn_select", format!("image {query_id} is not in the corpus")))?.to_vec();
    let neighbors = knn_query(&center, Some(query_id), bank, k)?;
    Ok(ImageGraph { center_id: query_id, center, neighbors })
}
