//! In-memory corpus, top-k document retrieval, per-document region proposal
//! and visual-token accounting.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::{propose_regions, RegionResult};
use crate::similarity::{max_pool_global, score_pooled, DocScore};
use crate::types::{HyperParams, PatchGrid, QueryEmbedding};

#[derive(Debug, Clone)]
struct Entry {
    grid: PatchGrid,
    pooled: Vec<f64>,
}

/// A set of documents sharing one embedding dimension.
///
/// Documents are keyed by id; pooled document vectors are computed once at
/// ingest.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: BTreeMap<String, Entry>,
    dim: Option<usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, doc_id: &str) -> Option<&PatchGrid> {
        self.docs.get(doc_id).map(|e| &e.grid)
    }

    /// Documents in id order.
    pub fn grids(&self) -> impl Iterator<Item = &PatchGrid> {
        self.docs.values().map(|e| &e.grid)
    }

    /// Adds a document, replacing any previous one with the same id.
    pub fn ingest(&mut self, grid: PatchGrid) -> Result<()> {
        grid.validate()?;
        if let Some(dim) = self.dim {
            let only_self = self.docs.len() == 1 && self.docs.contains_key(&grid.doc_id);
            if grid.dim() != dim && !only_self {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: grid.dim(),
                });
            }
        }
        let pooled = max_pool_global(&grid)?;
        self.dim = Some(grid.dim());
        self.docs.insert(grid.doc_id.clone(), Entry { grid, pooled });
        Ok(())
    }

    /// The `k` best documents by pooled cosine, ties broken by id ascending.
    pub fn retrieve_topk(&self, q: &QueryEmbedding, k: usize) -> Result<Vec<DocScore>> {
        if self.docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        let mut scores = self
            .docs
            .par_iter()
            .map(|(id, e)| score_pooled(q, id, &e.pooled))
            .collect::<Result<Vec<_>>>()?;
        scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        scores.truncate(k);
        Ok(scores)
    }

    /// Top-k retrieval followed by region proposal on every returned
    /// document.
    ///
    /// All regions of every returned document are kept unless `region_cap`
    /// is set, in which case only the `cap` regions with highest peak
    /// saliency across all documents survive (ties: document rank, then
    /// in-document order).
    pub fn retrieve_regions(
        &self,
        q: &QueryEmbedding,
        k: usize,
        hp: &HyperParams,
        region_cap: Option<usize>,
    ) -> Result<RetrievalResult> {
        hp.validate()?;
        let ranked_docs = self.retrieve_topk(q, k)?;
        let mut regions = ranked_docs
            .par_iter()
            .map(|d| {
                let grid = &self.docs[&d.doc_id].grid;
                Ok(DocRegions {
                    doc_id: d.doc_id.clone(),
                    regions: propose_regions(q, grid, hp)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        if let Some(cap) = region_cap {
            apply_region_cap(&mut regions, cap);
        }

        let token_report = self.token_report(&regions, hp.pixel_budget);
        Ok(RetrievalResult {
            ranked_docs,
            regions,
            token_report,
        })
    }

    fn token_report(&self, regions: &[DocRegions], pixel_budget: u64) -> TokenReport {
        let per_doc: Vec<DocTokens> = regions
            .iter()
            .map(|dr| {
                let g = &self.docs[&dr.doc_id].grid.geometry;
                let image = token_count(g.img_w, g.img_h, g.patch_w, g.patch_h, pixel_budget);
                let bbox = dr
                    .regions
                    .iter()
                    .map(|r| token_count(r.bbox.width(), r.bbox.height(), g.patch_w, g.patch_h, pixel_budget))
                    .sum();
                DocTokens {
                    doc_id: dr.doc_id.clone(),
                    image,
                    bbox,
                }
            })
            .collect();
        TokenReport {
            image: per_doc.iter().map(|d| d.image).sum(),
            bbox: per_doc.iter().map(|d| d.bbox).sum(),
            per_doc,
        }
    }
}

fn apply_region_cap(regions: &mut [DocRegions], cap: usize) {
    let mut order: Vec<(usize, usize, f64)> = regions
        .iter()
        .enumerate()
        .flat_map(|(d, dr)| dr.regions.iter().enumerate().map(move |(i, r)| (d, i, r.peak_score)))
        .collect();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut keep: Vec<Vec<bool>> = regions.iter().map(|dr| vec![false; dr.regions.len()]).collect();
    for &(d, i, _) in order.iter().take(cap) {
        keep[d][i] = true;
    }
    for (dr, keep) in regions.iter_mut().zip(keep) {
        let mut it = keep.into_iter();
        dr.regions.retain(|_| it.next().unwrap_or(false));
    }
}

/// Regions proposed for one retrieved document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocRegions {
    pub doc_id: String,
    pub regions: Vec<RegionResult>,
}

/// Visual-token cost of feeding one document either whole or as its regions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTokens {
    pub doc_id: String,
    pub image: u64,
    pub bbox: u64,
}

/// Token totals for the "image" and "bbox" input variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenReport {
    pub image: u64,
    pub bbox: u64,
    pub per_doc: Vec<DocTokens>,
}

/// Ranked documents plus their regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub ranked_docs: Vec<DocScore>,
    pub regions: Vec<DocRegions>,
    pub token_report: TokenReport,
}

/// Visual tokens spent on a `box_w x box_h` crop.
///
/// Crops larger than `pixel_budget` pixels are downscaled by
/// `sqrt(budget / area)` on both sides (floored, at least one pixel), then
/// tiled by patches with ceiling division.
pub fn token_count(box_w: u32, box_h: u32, patch_w: u32, patch_h: u32, pixel_budget: u64) -> u64 {
    let (mut w, mut h) = (box_w.max(1) as u64, box_h.max(1) as u64);
    let area = w * h;
    if area > pixel_budget {
        let scale = (pixel_budget as f64 / area as f64).sqrt();
        w = ((w as f64 * scale).floor() as u64).max(1);
        h = ((h as f64 * scale).floor() as u64).max(1);
    }
    let (pw, ph) = (patch_w.max(1) as u64, patch_h.max(1) as u64);
    w.div_ceil(pw) * h.div_ceil(ph)
}
