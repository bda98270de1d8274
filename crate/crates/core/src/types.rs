//! Shared domain types and their validation.
//!
//! Grid cells are addressed row-major: patch index `k` lives at
//! `row = k / cols`, `col = k % cols`. Pixel coordinates use `x` for the
//! column axis and `y` for the row axis, origin top-left.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel geometry of a patch grid laid over a document image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridGeometry {
    pub rows: u32,
    pub cols: u32,
    pub patch_h: u32,
    pub patch_w: u32,
    pub img_h: u32,
    pub img_w: u32,
}

impl GridGeometry {
    /// Geometry whose image is exactly tiled by the patches.
    pub fn exact(rows: u32, cols: u32, patch_h: u32, patch_w: u32) -> Self {
        Self {
            rows,
            cols,
            patch_h,
            patch_w,
            img_h: rows * patch_h,
            img_w: cols * patch_w,
        }
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, index: usize) -> Cell {
        let cols = self.cols as usize;
        Cell {
            row: index / cols,
            col: index % cols,
        }
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols as usize + cell.col
    }

    /// Pixel rectangle covered by one patch, clamped to the image.
    pub fn patch_rect(&self, cell: Cell) -> BBox {
        let x1 = cell.col as u32 * self.patch_w;
        let y1 = cell.row as u32 * self.patch_h;
        BBox {
            x1,
            y1,
            x2: (x1 + self.patch_w).min(self.img_w),
            y2: (y1 + self.patch_h).min(self.img_h),
        }
    }

    /// The full image rectangle.
    pub fn image_rect(&self) -> BBox {
        BBox {
            x1: 0,
            y1: 0,
            x2: self.img_w,
            y2: self.img_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rows", self.rows),
            ("cols", self.cols),
            ("patch_h", self.patch_h),
            ("patch_w", self.patch_w),
            ("img_h", self.img_h),
            ("img_w", self.img_w),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::GeometryInconsistent(format!("{name} must be positive")));
            }
        }
        check_axis("rows", self.rows, self.patch_h, self.img_h)?;
        check_axis("cols", self.cols, self.patch_w, self.img_w)?;
        Ok(())
    }
}

// The grid must cover the image and the last cell must start inside it.
fn check_axis(name: &str, cells: u32, patch: u32, img: u32) -> Result<()> {
    let covered = cells as u64 * patch as u64;
    let start_of_last = (cells as u64 - 1) * patch as u64;
    if covered < img as u64 {
        return Err(Error::GeometryInconsistent(format!(
            "{name}: {cells} x {patch} px does not cover {img} px"
        )));
    }
    if start_of_last >= img as u64 {
        return Err(Error::GeometryInconsistent(format!(
            "{name}: last cell starts at {start_of_last} px, outside {img} px image"
        )));
    }
    if covered > u32::MAX as u64 {
        return Err(Error::GeometryInconsistent(format!("{name}: pixel extent overflows")));
    }
    Ok(())
}

/// A grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// A document as a grid of patch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub doc_id: String,
    pub geometry: GridGeometry,
    /// Row-major, one vector per patch.
    pub embeddings: Vec<Vec<f64>>,
}

impl PatchGrid {
    pub fn new(doc_id: impl Into<String>, geometry: GridGeometry, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        let grid = Self {
            doc_id: doc_id.into(),
            geometry,
            embeddings,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Embedding dimension, taken from the first patch.
    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.geometry.len();
        if self.embeddings.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.embeddings.len(),
            });
        }
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        for (k, v) in self.embeddings.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            check_finite(k, v)?;
        }
        self.geometry.validate()
    }
}

/// Checks every invariant of a [`PatchGrid`].
pub fn validate_patch_grid(grid: &PatchGrid) -> Result<()> {
    grid.validate()
}

fn check_finite(vector: usize, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(component) => Err(Error::NonFiniteComponent { vector, component }),
        None => Ok(()),
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A query vector, optionally carrying the per-token vectors it was
/// aggregated from.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub query_id: String,
    pub vector: Vec<f64>,
    pub raw_token_vectors: Option<Vec<Vec<f64>>>,
}

impl QueryEmbedding {
    pub fn from_vector(query_id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let q = Self {
            query_id: query_id.into(),
            vector,
            raw_token_vectors: None,
        };
        q.validate()?;
        Ok(q)
    }

    /// Aggregates token vectors by arithmetic mean followed by L2 normalization.
    pub fn from_tokens(query_id: impl Into<String>, tokens: Vec<Vec<f64>>) -> Result<Self> {
        let vector = aggregate_tokens(&tokens)?;
        let q = Self {
            query_id: query_id.into(),
            vector,
            raw_token_vectors: Some(tokens),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vector.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        check_finite(0, &self.vector)?;
        if l2_norm(&self.vector) == 0.0 {
            return Err(Error::ZeroNormVector { index: None });
        }
        if let Some(tokens) = &self.raw_token_vectors {
            let expected = aggregate_tokens(tokens)?;
            if expected != self.vector {
                return Err(Error::InvalidArgument(
                    "query vector is not the normalized mean of its token vectors".into(),
                ));
            }
        }
        Ok(())
    }
}

fn aggregate_tokens(tokens: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = tokens
        .first()
        .ok_or_else(|| Error::InvalidArgument("query has no token vectors".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    let mut mean = vec![0.0; dim];
    for (t, v) in tokens.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        check_finite(t, v)?;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = tokens.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = l2_norm(&mean);
    if norm == 0.0 {
        return Err(Error::ZeroNormVector { index: None });
    }
    mean.iter_mut().for_each(|m| *m /= norm);
    Ok(mean)
}

/// Inclusive-corner pixel rectangle, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn validate(&self, img_w: u32, img_h: u32) -> Result<()> {
        if self.x1 < self.x2 && self.y1 < self.y2 && self.x2 <= img_w && self.y2 <= img_h {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
                img_w,
                img_h,
            })
        }
    }

    /// Inclusive on all four edges.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 as f64 && x <= self.x2 as f64 && y >= self.y1 as f64 && y <= self.y2 as f64
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Area of overlap when both boxes are read as half-open pixel spans.
    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.x2.min(other.x2).saturating_sub(self.x1.max(other.x1));
        let h = self.y2.min(other.y2).saturating_sub(self.y1.max(other.y1));
        w as u64 * h as u64
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Center of the rectangle in pixel space.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x1 as f64 + self.x2 as f64) / 2.0,
            (self.y1 as f64 + self.y2 as f64) / 2.0,
        )
    }
}

/// Per-patch cosine scores of one query against one document.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub doc_id: String,
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: self.scores.len(),
            });
        }
        if let Some(k) = self.scores.iter().position(|s| !s.is_finite() || s.abs() > 1.0 + 1e-6) {
            return Err(Error::InvalidArgument(format!(
                "saliency score {} at index {k} outside [-1, 1]",
                self.scores[k]
            )));
        }
        Ok(())
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.scores[cell.row * self.cols + cell.col]
    }
}

/// Binarized saliency map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: bits.len(),
            });
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn get(&self, cell: Cell) -> bool {
        self.bits[cell.row * self.cols + cell.col]
    }

    /// Salient cells in row-major order.
    pub fn salient_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let cols = self.cols;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| Cell::new(k / cols, k % cols))
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Positive and negative patch index sets for the local objective.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupervisionSets {
    pub positive: BTreeSet<usize>,
    pub negative: BTreeSet<usize>,
}

impl SupervisionSets {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(k) = self.positive.intersection(&self.negative).next() {
            return Err(Error::InvalidSupervision(format!(
                "index {k} is both positive and negative"
            )));
        }
        if let Some(k) = self.positive.iter().chain(&self.negative).find(|&&k| k >= n) {
            return Err(Error::InvalidSupervision(format!(
                "index {k} outside grid of {n} patches"
            )));
        }
        Ok(())
    }
}

/// Training and inference hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Temperature of the document-level objective.
    pub tau_global: f64,
    /// Temperature of the patch-level objective.
    pub tau_local: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Pseudo-label threshold.
    pub theta: f64,
    /// Saliency threshold for region proposal.
    pub eta: f64,
    /// Chebyshev neighbor range.
    pub radius: u32,
    /// Max pixel area before an input is downscaled for token accounting.
    pub pixel_budget: u64,
}

impl HyperParams {
    pub const DEFAULT_TAU_GLOBAL: f64 = 0.02;
    pub const DEFAULT_TAU_LOCAL: f64 = 0.25;
    pub const DEFAULT_ALPHA: f64 = 1.0;
    pub const DEFAULT_BETA: f64 = 0.01;
    pub const DEFAULT_THETA: f64 = 0.0;
    pub const DEFAULT_RADIUS: u32 = 1;
    pub const DEFAULT_PIXEL_BUDGET: u64 = 512 * 512;

    /// Default settings with the given saliency threshold. The threshold has
    /// no sensible universal default and must be chosen per dataset.
    pub fn new(eta: f64) -> Self {
        Self {
            tau_global: Self::DEFAULT_TAU_GLOBAL,
            tau_local: Self::DEFAULT_TAU_LOCAL,
            alpha: Self::DEFAULT_ALPHA,
            beta: Self::DEFAULT_BETA,
            theta: Self::DEFAULT_THETA,
            eta,
            radius: Self::DEFAULT_RADIUS,
            pixel_budget: Self::DEFAULT_PIXEL_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidHyperParams(msg.to_string()));
        if !(self.tau_global.is_finite() && self.tau_global > 0.0) {
            return bad("tau_global must be positive");
        }
        if !(self.tau_local.is_finite() && self.tau_local > 0.0) {
            return bad("tau_local must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [-1, 1]");
        }
        // eta outside [-1, 1] is allowed: it selects everything or nothing.
        if !self.eta.is_finite() {
            return bad("eta must be finite");
        }
        if self.radius == 0 {
            return bad("radius must be positive");
        }
        if self.pixel_budget == 0 {
            return bad("pixel_budget must be positive");
        }
        Ok(())
    }
}
