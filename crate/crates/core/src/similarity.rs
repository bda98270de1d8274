//! Cosine scoring, max-pooled document vectors and saliency maps.
//!
//! Pooling runs over raw embeddings; vectors are only normalized inside
//! [`cosine`]. All arithmetic is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PatchGrid, QueryEmbedding, SaliencyMap};

/// Relevance of one document to one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub score: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::ZeroNormVector { index: Some(0) });
    }
    if nb == 0.0 {
        return Err(Error::ZeroNormVector { index: Some(1) });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Element-wise maximum over all patch embeddings.
pub fn max_pool_global(grid: &PatchGrid) -> Result<Vec<f64>> {
    let (first, rest) = grid.embeddings.split_first().ok_or(Error::EmptyGrid)?;
    let mut pooled = first.clone();
    for v in rest {
        if v.len() != pooled.len() {
            return Err(Error::DimensionMismatch {
                expected: pooled.len(),
                found: v.len(),
            });
        }
        for (p, x) in pooled.iter_mut().zip(v) {
            if *x > *p {
                *p = *x;
            }
        }
    }
    Ok(pooled)
}

/// Cosine between the query and an already pooled document vector.
pub fn score_pooled(q: &QueryEmbedding, doc_id: &str, pooled: &[f64]) -> Result<DocScore> {
    let score = cosine(&q.vector, pooled).map_err(|e| match e {
        Error::ZeroNormVector { index: Some(1) } => Error::ZeroNormVector { index: None },
        e => e,
    })?;
    Ok(DocScore {
        doc_id: doc_id.to_string(),
        score,
    })
}

/// Cosine between the query and the max-pooled document vector.
pub fn score_document(q: &QueryEmbedding, grid: &PatchGrid) -> Result<DocScore> {
    let pooled = max_pool_global(grid)?;
    score_pooled(q, &grid.doc_id, &pooled)
}

/// Per-patch cosine against the query, preserving grid layout.
///
/// A zero patch vector is an ingestion bug and is reported with its index.
pub fn saliency_map(q: &QueryEmbedding, grid: &PatchGrid) -> Result<SaliencyMap> {
    let qn = norm(&q.vector);
    if qn == 0.0 {
        return Err(Error::ZeroNormVector { index: None });
    }
    let scores = grid
        .embeddings
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if e.len() != q.vector.len() {
                return Err(Error::DimensionMismatch {
                    expected: q.vector.len(),
                    found: e.len(),
                });
            }
            let en = norm(e);
            if en == 0.0 {
                return Err(Error::ZeroNormVector { index: Some(k) });
            }
            Ok((dot(&q.vector, e) / (qn * en)).clamp(-1.0, 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SaliencyMap {
        doc_id: grid.doc_id.clone(),
        rows: grid.geometry.rows as usize,
        cols: grid.geometry.cols as usize,
        scores,
    })
}
