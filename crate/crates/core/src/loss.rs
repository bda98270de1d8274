//! Contrastive objectives with analytic gradients.
//!
//! The document-level loss is InfoNCE over in-batch pairs using max-pooled
//! document vectors; the patch-level loss contrasts positive against
//! positive-plus-negative patches for one query. Gradients are returned for
//! every query vector and every patch embedding, with max-pooling routing
//! each component's gradient to its first argmax patch.

pub mod check;

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::similarity::{dot, norm, saliency_map};
use crate::types::{BBox, HyperParams, PatchGrid, QueryEmbedding, SaliencyMap, SupervisionSets};

/// One query/document training pair with optional ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub query: QueryEmbedding,
    pub grid: PatchGrid,
    pub boxes: Option<Vec<BBox>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pairs: Vec<TrainingPair>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.pairs.first().ok_or(Error::EmptyBatch)?;
        let dim = first.query.dim();
        for p in &self.pairs {
            p.grid.validate()?;
            for found in [p.query.dim(), p.grid.dim()] {
                if found != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found });
                }
            }
        }
        Ok(())
    }
}

/// Gradient with respect to one pair's query vector and patch embeddings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairGrad {
    pub query: Vec<f64>,
    pub patches: Vec<Vec<f64>>,
}

impl PairGrad {
    fn zeros(dim: usize, n: usize) -> Self {
        Self {
            query: vec![0.0; dim],
            patches: vec![vec![0.0; dim]; n],
        }
    }

    fn add_scaled(&mut self, other: &PairGrad, c: f64) {
        axpy(&mut self.query, c, &other.query);
        for (a, b) in self.patches.iter_mut().zip(&other.patches) {
            axpy(a, c, b);
        }
    }

    /// All components, query first, then patches in order.
    pub fn flatten(&self) -> impl Iterator<Item = f64> + '_ {
        self.query.iter().chain(self.patches.iter().flatten()).copied()
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Cosine with partials `(s, ds/da, ds/db)`.
fn cosine_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    let s = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let da = a.iter().zip(b).map(|(ai, bi)| bi * inv - s * ai / (na * na)).collect();
    let db = a.iter().zip(b).map(|(ai, bi)| ai * inv - s * bi / (nb * nb)).collect();
    (s, da, db)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-log(Σ_pos e^l / Σ_all e^l)` where `all = pos ∪ neg`, via log-sum-exp.
pub(crate) fn contrastive_nll(pos: &[f64], neg: &[f64]) -> f64 {
    if neg.is_empty() {
        return 0.0;
    }
    let m_pos = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m_all = neg.iter().copied().fold(m_pos, f64::max);
    let s_pos: f64 = pos.iter().map(|l| (l - m_pos).exp()).sum();
    let s_all: f64 = pos.iter().chain(neg).map(|l| (l - m_all).exp()).sum();
    ((m_all - m_pos) + (s_all.ln() - s_pos.ln())).max(0.0)
}

/// Max-pooled vector and, per component, the first patch attaining the max.
fn pool_with_argmax(grid: &PatchGrid) -> Result<(Vec<f64>, Vec<usize>)> {
    let first = grid.embeddings.first().ok_or(Error::EmptyGrid)?;
    let mut pooled = first.clone();
    let mut arg = vec![0; pooled.len()];
    for (k, v) in grid.embeddings.iter().enumerate().skip(1) {
        for c in 0..pooled.len() {
            if v[c] > pooled[c] {
                pooled[c] = v[c];
                arg[c] = k;
            }
        }
    }
    Ok((pooled, arg))
}

/// Value and gradients of the in-batch document-level InfoNCE loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalLoss {
    pub value: f64,
    pub grads: Vec<PairGrad>,
}

pub fn global_loss(batch: &Batch, tau: f64) -> Result<GlobalLoss> {
    batch.validate()?;
    check_tau(tau)?;
    let b = batch.len();
    let dim = batch.pairs[0].query.dim();

    let mut pooled = Vec::with_capacity(b);
    for (i, p) in batch.pairs.iter().enumerate() {
        let (v, arg) = pool_with_argmax(&p.grid)?;
        if norm(&v) == 0.0 {
            return Err(Error::ZeroNormVector { index: Some(i) });
        }
        pooled.push((v, arg));
    }

    let mut grads: Vec<PairGrad> = batch.pairs.iter().map(|p| PairGrad::zeros(dim, p.grid.len())).collect();
    let mut pooled_grads = vec![vec![0.0; dim]; b];
    let mut total = 0.0;

    for (i, pi) in batch.pairs.iter().enumerate() {
        let parts: Vec<_> = pooled.iter().map(|(v, _)| cosine_grad(&pi.query.vector, v)).collect();
        let logits: Vec<f64> = parts.iter().map(|(s, _, _)| s / tau).collect();
        let lse = log_sum_exp(logits.iter().copied());
        total += lse - logits[i];
        for (j, (_, dq, dv)) in parts.iter().enumerate() {
            let p = (logits[j] - lse).exp();
            let coeff = (p - if i == j { 1.0 } else { 0.0 }) / (b as f64 * tau);
            axpy(&mut grads[i].query, coeff, dq);
            axpy(&mut pooled_grads[j], coeff, dv);
        }
    }

    for (j, (_, arg)) in pooled.iter().enumerate() {
        for (c, &k) in arg.iter().enumerate() {
            grads[j].patches[k][c] += pooled_grads[j][c];
        }
    }

    Ok(GlobalLoss {
        value: (total / b as f64).max(0.0),
        grads,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidHyperParams(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

/// Value and gradients of the patch-level contrastive loss for one pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalLoss {
    pub value: f64,
    pub grad: PairGrad,
}

pub fn local_loss(q: &QueryEmbedding, grid: &PatchGrid, sets: &SupervisionSets, tau: f64) -> Result<LocalLoss> {
    check_tau(tau)?;
    sets.validate(grid.len())?;
    if sets.positive.is_empty() {
        return Err(Error::EmptyPositiveSet);
    }
    let dim = q.dim();
    let mut grad = PairGrad::zeros(dim, grid.len());

    let mut pos = Vec::with_capacity(sets.positive.len());
    let mut neg = Vec::with_capacity(sets.negative.len());
    let mut parts = Vec::with_capacity(sets.positive.len() + sets.negative.len());
    for (&k, is_pos) in sets
        .positive
        .iter()
        .map(|k| (k, true))
        .chain(sets.negative.iter().map(|k| (k, false)))
    {
        let e = &grid.embeddings[k];
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.len(),
            });
        }
        if norm(e) == 0.0 {
            return Err(Error::ZeroNormVector { index: Some(k) });
        }
        let (s, dq, de) = cosine_grad(&q.vector, e);
        if is_pos { &mut pos } else { &mut neg }.push(s / tau);
        parts.push((k, is_pos, s / tau, dq, de));
    }

    if neg.is_empty() {
        return Ok(LocalLoss { value: 0.0, grad });
    }

    let lse_pos = log_sum_exp(pos.iter().copied());
    let lse_all = log_sum_exp(pos.iter().chain(&neg).copied());
    for (k, is_pos, l, dq, de) in &parts {
        let mut coeff = (l - lse_all).exp();
        if *is_pos {
            coeff -= (l - lse_pos).exp();
        }
        coeff /= tau;
        axpy(&mut grad.query, coeff, dq);
        axpy(&mut grad.patches[*k], coeff, de);
    }

    Ok(LocalLoss {
        value: contrastive_nll(&pos, &neg),
        grad,
    })
}

/// Patches whose center lies inside any box (edges inclusive) are
/// positive; patches whose rectangle misses every box are negative. Patches
/// straddling a box edge with their center outside belong to neither set.
pub fn labels_from_boxes(grid: &PatchGrid, boxes: &[BBox]) -> Result<SupervisionSets> {
    let g = &grid.geometry;
    for b in boxes {
        b.validate(g.img_w, g.img_h)?;
    }
    let mut sets = SupervisionSets::default();
    for k in 0..g.len() {
        let rect = g.patch_rect(g.cell(k));
        let (cx, cy) = rect.center();
        if boxes.iter().any(|b| b.contains_point(cx, cy)) {
            sets.positive.insert(k);
        } else if boxes.iter().all(|b| b.intersection_area(&rect) == 0) {
            sets.negative.insert(k);
        }
    }
    Ok(sets)
}

/// Scores at or above `theta` are positive, everything else negative.
pub fn labels_from_pseudo(s: &SaliencyMap, theta: f64) -> SupervisionSets {
    let (positive, negative): (BTreeSet<usize>, BTreeSet<usize>) =
        (0..s.scores.len()).partition(|&k| s.scores[k] >= theta);
    SupervisionSets { positive, negative }
}

/// Label sets for every pair: boxes when present, pseudo-labels otherwise.
pub fn resolve_supervision(batch: &Batch, theta: f64) -> Result<Vec<SupervisionSets>> {
    batch
        .pairs
        .iter()
        .map(|p| match &p.boxes {
            Some(boxes) => labels_from_boxes(&p.grid, boxes),
            None => Ok(labels_from_pseudo(&saliency_map(&p.query, &p.grid)?, theta)),
        })
        .collect()
}

/// Weighted objective with its parts and gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub hyper_params: HyperParams,
    pub global_loss: f64,
    pub local_losses: Vec<f64>,
    pub combined: f64,
    pub gradients: Vec<PairGrad>,
}

/// `alpha * global + beta * mean(local)`, labels resolved from the batch.
pub fn combined_loss(batch: &Batch, hp: &HyperParams) -> Result<LossReport> {
    batch.validate()?;
    let sets = resolve_supervision(batch, hp.theta)?;
    combined_loss_with_sets(batch, &sets, hp)
}

/// As [`combined_loss`] with label sets held fixed.
pub fn combined_loss_with_sets(batch: &Batch, sets: &[SupervisionSets], hp: &HyperParams) -> Result<LossReport> {
    hp.validate()?;
    if sets.len() != batch.len() {
        return Err(Error::InvalidSupervision(format!(
            "{} label sets for {} pairs",
            sets.len(),
            batch.len()
        )));
    }
    let global = global_loss(batch, hp.tau_global)?;
    let locals = batch
        .pairs
        .iter()
        .zip(sets)
        .map(|(p, s)| local_loss(&p.query, &p.grid, s, hp.tau_local))
        .collect::<Result<Vec<_>>>()?;

    let b = batch.len() as f64;
    let local_mean = locals.iter().map(|l| l.value).sum::<f64>() / b;
    let mut gradients = global.grads;
    for g in &mut gradients {
        g.query
            .iter_mut()
            .chain(g.patches.iter_mut().flatten())
            .for_each(|x| *x *= hp.alpha);
    }
    for (g, l) in gradients.iter_mut().zip(&locals) {
        g.add_scaled(&l.grad, hp.beta / b);
    }
    Ok(LossReport {
        hyper_params: *hp,
        global_loss: global.value,
        local_losses: locals.iter().map(|l| l.value).collect(),
        combined: hp.alpha * global.value + hp.beta * local_mean,
        gradients,
    })
}
