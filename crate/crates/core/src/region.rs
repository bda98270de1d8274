//! Region proposal: saliency thresholding, Chebyshev-radius connected
//! components and grid-to-pixel bounding boxes.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::similarity::saliency_map;
use crate::types::{BBox, Cell, GridGeometry, HyperParams, Mask, PatchGrid, QueryEmbedding, SaliencyMap};

/// A maximal set of salient cells connected under the neighbor range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Cells in breadth-first visit order.
    pub cells: Vec<Cell>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// One proposed region of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionResult {
    pub bbox: BBox,
    pub component: Component,
    pub peak_score: f64,
    pub mean_score: f64,
}

/// `bits[k] = scores[k] >= eta`.
pub fn binarize(s: &SaliencyMap, eta: f64) -> Mask {
    Mask {
        rows: s.rows,
        cols: s.cols,
        bits: s.scores.iter().map(|&x| x >= eta).collect(),
    }
}

pub fn chebyshev(a: Cell, b: Cell) -> usize {
    a.row.abs_diff(b.row).max(a.col.abs_diff(b.col))
}

/// Groups salient cells into components by breadth-first search over the
/// Chebyshev ball of radius `radius`, clipped to the grid.
///
/// Components are emitted in the order their first cell is met by a
/// row-major scan.
pub fn find_components(mask: &Mask, radius: usize) -> Vec<Component> {
    let (rows, cols) = (mask.rows, mask.cols);
    let mut visited = vec![false; rows * cols];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for start in mask.salient_cells() {
        let k = start.row * cols + start.col;
        if visited[k] {
            continue;
        }
        visited[k] = true;
        queue.push_back(start);
        let mut cells = Vec::new();
        while let Some(cur) = queue.pop_front() {
            cells.push(cur);
            let r0 = cur.row.saturating_sub(radius);
            let r1 = (cur.row + radius).min(rows - 1);
            let c0 = cur.col.saturating_sub(radius);
            let c1 = (cur.col + radius).min(cols - 1);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let j = row * cols + col;
                    if mask.bits[j] && !visited[j] {
                        visited[j] = true;
                        queue.push_back(Cell::new(row, col));
                    }
                }
            }
        }
        components.push(Component { cells });
    }
    components
}

/// Minimum bounding rectangle of a component in pixels, with the trailing
/// edge clamped to the image.
pub fn min_bbox(component: &Component, geometry: &GridGeometry) -> Result<BBox> {
    let first = component.cells.first().ok_or(Error::EmptyComponent)?;
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (first.col, first.col, first.row, first.row);
    for c in &component.cells[1..] {
        x_min = x_min.min(c.col);
        x_max = x_max.max(c.col);
        y_min = y_min.min(c.row);
        y_max = y_max.max(c.row);
    }
    if x_max >= geometry.cols as usize || y_max >= geometry.rows as usize {
        return Err(Error::InvalidArgument(format!(
            "cell ({y_max}, {x_max}) outside {}x{} grid",
            geometry.rows, geometry.cols
        )));
    }
    let (pw, ph) = (geometry.patch_w as u64, geometry.patch_h as u64);
    // Coordinates are bounded by the validated image size, so they fit in u32.
    Ok(BBox {
        x1: (x_min as u64 * pw) as u32,
        y1: (y_min as u64 * ph) as u32,
        x2: ((x_max as u64 + 1) * pw).min(geometry.img_w as u64) as u32,
        y2: ((y_max as u64 + 1) * ph).min(geometry.img_h as u64) as u32,
    })
}

/// Proposes regions from an existing saliency map.
pub fn regions_from_saliency(
    saliency: &SaliencyMap,
    geometry: &GridGeometry,
    eta: f64,
    radius: usize,
) -> Result<Vec<RegionResult>> {
    let mask = binarize(saliency, eta);
    let mut regions = find_components(&mask, radius)
        .into_iter()
        .map(|component| {
            let bbox = min_bbox(&component, geometry)?;
            let scores = component.cells.iter().map(|&c| saliency.get(c));
            let peak_score = scores.clone().fold(f64::NEG_INFINITY, f64::max);
            let mean_score = scores.sum::<f64>() / component.len() as f64;
            Ok(RegionResult {
                bbox,
                component,
                peak_score,
                // Summation rounding can push the mean a hair above the peak.
                mean_score: mean_score.min(peak_score),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // Stable: ties keep first-visit order.
    regions.sort_by(|a, b| b.peak_score.total_cmp(&a.peak_score));
    Ok(regions)
}

/// Saliency map, threshold, components and boxes for one document, sorted by
/// peak saliency descending.
pub fn propose_regions(q: &QueryEmbedding, grid: &PatchGrid, hp: &HyperParams) -> Result<Vec<RegionResult>> {
    hp.validate()?;
    let saliency = saliency_map(q, grid)?;
    regions_from_saliency(&saliency, &grid.geometry, hp.eta, hp.radius as usize)
}
