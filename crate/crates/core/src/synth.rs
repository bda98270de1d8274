//! Deterministic synthetic corpora with planted relevant regions.
//!
//! Construction, for `Q` queries, `M` documents and dimension `d ≥ Q + 1`:
//!
//! * Query `i` (id `q{i:04}`) is the one-hot vector on dimension `i`.
//!   Dimensions `Q..d` form the background subspace.
//! * Query `i` is relevant to document `i mod M` (id `doc{j:04}`).
//! * Block placement: for each document in order, for each of its queries in
//!   increasing order, draw a top-left cell as `row = next_u64() % (rows −
//!   block_rows + 1)`, then `col` likewise; redraw (up to 64 times) until the
//!   block does not overlap blocks already placed in that document.
//! * Patch vectors: documents in order, patches row-major. A planted patch
//!   of query `i` is `e_i + noise · u`; a background patch is `b`. Both `u`
//!   and `b` are drawn as `d − Q` values `2 · next_f64() − 1` over the
//!   background dimensions (zero elsewhere), redrawn while their squared
//!   norm is below 1e-6; `u` is then divided by its norm. No draw is made
//!   for `u` when `noise == 0`.
//! * All components are rounded to `f32`.
//!
//! Planted patches have cosine `1/√(1+noise²)` with their query, every other
//! patch has cosine exactly 0, and a document's pooled vector is zero on the
//! topic dimension of every query not planted in it, so each query's
//! relevant document is its unique best match.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, EmbeddingRecord, FormatError, Manifest};
use crate::metrics::QueryJudgment;
use crate::region::{min_bbox, Component};
use crate::rng::SplitMix64;
use crate::types::{BBox, Cell, GridGeometry, PatchGrid, QueryEmbedding};

/// Largest noise keeping planted cosines at or above 0.9.
pub const MAX_NOISE: f64 = 0.484_322_104_837_852_5;

const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub docs: usize,
    pub queries: usize,
    pub dim: usize,
    pub rows: u32,
    pub cols: u32,
    pub patch_h: u32,
    pub patch_w: u32,
    /// Defaults to `rows * patch_h`.
    pub img_h: Option<u32>,
    /// Defaults to `cols * patch_w`.
    pub img_w: Option<u32>,
    pub block_rows: u32,
    pub block_cols: u32,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            docs: 50,
            queries: 100,
            dim: 128,
            rows: 8,
            cols: 8,
            patch_h: 28,
            patch_w: 28,
            img_h: None,
            img_w: None,
            block_rows: 2,
            block_cols: 2,
            noise: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            img_h: self.img_h.unwrap_or(self.rows * self.patch_h),
            img_w: self.img_w.unwrap_or(self.cols * self.patch_w),
            ..GridGeometry::exact(self.rows, self.cols, self.patch_h, self.patch_w)
        }
    }

    fn validate(&self) -> Result<()> {
        let infeasible = |m: String| Err(Error::InfeasibleGeometry(m));
        if self.docs == 0 || self.queries == 0 {
            return infeasible("need at least one document and one query".into());
        }
        self.geometry().validate()?;
        if self.block_rows == 0 || self.block_cols == 0 {
            return infeasible("planted block must be non-empty".into());
        }
        if self.block_rows > self.rows || self.block_cols > self.cols {
            return infeasible(format!(
                "{}x{} block does not fit a {}x{} grid",
                self.block_rows, self.block_cols, self.rows, self.cols
            ));
        }
        if self.dim < self.queries + 1 {
            return infeasible(format!(
                "dimension {} too small for {} queries (need at least {})",
                self.dim,
                self.queries,
                self.queries + 1
            ));
        }
        if !(0.0..=MAX_NOISE).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!("noise must lie in [0, {MAX_NOISE}]")));
        }
        Ok(())
    }
}

/// Ground truth for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedBox {
    pub query_id: String,
    pub doc_id: String,
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [u32; 4],
}

impl PlantedBox {
    pub fn bbox(&self) -> BBox {
        let [x1, y1, x2, y2] = self.bbox;
        BBox::new(x1, y1, x2, y2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub docs: Vec<PatchGrid>,
    pub queries: Vec<QueryEmbedding>,
    pub judgments: Vec<QueryJudgment>,
    pub planted: Vec<PlantedBox>,
}

pub fn doc_id(j: usize) -> String {
    format!("doc{j:04}")
}

pub fn query_id(i: usize) -> String {
    format!("q{i:04}")
}

fn background(rng: &mut SplitMix64, dim: usize, from: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; dim];
        for x in &mut v[from..] {
            *x = 2.0 * rng.next_f64() - 1.0;
        }
        if v.iter().map(|x| x * x).sum::<f64>() >= 1e-6 {
            return v;
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let geometry = cfg.geometry();
    let (m, q, d) = (cfg.docs, cfg.queries, cfg.dim);
    let (br, bc) = (cfg.block_rows as usize, cfg.block_cols as usize);
    let (rows, cols) = (cfg.rows as usize, cfg.cols as usize);
    let mut rng = SplitMix64::new(cfg.seed);

    // owner[j][k] = query planted at patch k of doc j
    let mut owner: Vec<Vec<Option<usize>>> = vec![vec![None; rows * cols]; m];
    let mut planted = Vec::with_capacity(q);
    for (j, owner) in owner.iter_mut().enumerate() {
        for i in (j..q).step_by(m) {
            let top_left = (0..PLACEMENT_ATTEMPTS)
                .map(|_| {
                    let r = rng.below((rows - br + 1) as u64) as usize;
                    let c = rng.below((cols - bc + 1) as u64) as usize;
                    (r, c)
                })
                .find(|&(r, c)| (r..r + br).all(|y| (c..c + bc).all(|x| owner[y * cols + x].is_none())))
                .ok_or_else(|| {
                    Error::InfeasibleGeometry(format!("could not place a non-overlapping block for {}", query_id(i)))
                })?;
            let cells: Vec<Cell> = (top_left.0..top_left.0 + br)
                .flat_map(|y| (top_left.1..top_left.1 + bc).map(move |x| Cell::new(y, x)))
                .collect();
            for c in &cells {
                owner[c.row * cols + c.col] = Some(i);
            }
            let bbox = min_bbox(&Component { cells }, &geometry)?;
            planted.push(PlantedBox {
                query_id: query_id(i),
                doc_id: doc_id(j),
                bbox: [bbox.x1, bbox.y1, bbox.x2, bbox.y2],
            });
        }
    }
    planted.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let mut docs = Vec::with_capacity(m);
    for (j, owner) in owner.iter().enumerate() {
        let embeddings = owner
            .iter()
            .map(|slot| {
                let v = match *slot {
                    Some(i) => {
                        let mut v = vec![0.0; d];
                        if cfg.noise > 0.0 {
                            let u = background(&mut rng, d, q);
                            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                            for (x, ux) in v.iter_mut().zip(&u) {
                                *x = cfg.noise * (ux / n);
                            }
                        }
                        v[i] = 1.0;
                        v
                    }
                    None => background(&mut rng, d, q),
                };
                v.into_iter().map(|x| x as f32 as f64).collect()
            })
            .collect();
        docs.push(PatchGrid::new(doc_id(j), geometry, embeddings)?);
    }

    let queries = (0..q)
        .map(|i| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            QueryEmbedding::from_vector(query_id(i), v)
        })
        .collect::<Result<Vec<_>>>()?;
    let judgments = (0..q)
        .map(|i| QueryJudgment::new(query_id(i), [doc_id(i % m)]))
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthCorpus {
        docs,
        queries,
        judgments,
        planted,
    })
}

/// Relative paths used by [`write_corpus`].
pub const DOCS_DIR: &str = "docs";
pub const QUERIES_DIR: &str = "queries";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const PLANTED_FILE: &str = "planted.jsonl";

/// Writes documents, queries, a manifest, judgments and planted boxes under
/// `dir`. The manifest carries no timestamp, so output is byte-identical
/// for identical configs.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<(), FormatError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| FormatError::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    let (docs_dir, queries_dir) = (dir.join(DOCS_DIR), dir.join(QUERIES_DIR));
    mkdir(&docs_dir)?;
    mkdir(&queries_dir)?;

    let mut entries = Vec::with_capacity(corpus.docs.len());
    for g in &corpus.docs {
        let name = format!("{}.{}", g.doc_id, format::EXTENSION);
        format::write_embedding_file(&EmbeddingRecord::Document(g.clone()), &docs_dir.join(&name))?;
        entries.push((g, format!("{DOCS_DIR}/{name}")));
    }
    for q in &corpus.queries {
        let name = format!("{}.{}", q.query_id, format::EXTENSION);
        format::write_embedding_file(&EmbeddingRecord::Query(q.clone()), &queries_dir.join(name))?;
    }
    Manifest::build(&entries, None)?.write(&dir.join(format::MANIFEST_FILE))?;

    let write_lines = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
        let path = dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf)
            .and_then(|_| fs::write(&path, buf))
            .map_err(|e| FormatError::Io { path, source: e })
    };
    write_lines(JUDGMENTS_FILE, &|b| format::write_jsonl(b, &corpus.judgments))?;
    write_lines(PLANTED_FILE, &|b| format::write_jsonl(b, &corpus.planted))?;
    Ok(())
}
