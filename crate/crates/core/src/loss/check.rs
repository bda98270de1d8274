//! Self-check suite for the objectives: closed-form values plus analytic
//! gradients compared against central finite differences on random
//! instances.
//!
//! The finite-difference side only ever evaluates loss values, so it stays
//! independent of the analytic gradient code it checks.

use serde::Serialize;

use super::{combined_loss_with_sets, global_loss, local_loss, resolve_supervision, Batch, PairGrad, TrainingPair};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::types::{BBox, GridGeometry, HyperParams, PatchGrid, QueryEmbedding, SupervisionSets};

/// Sizes and tolerances for the randomized checks.
#[derive(Debug, Clone, Serialize)]
pub struct CheckConfig {
    pub instances: usize,
    pub max_batch: usize,
    pub max_dim: usize,
    pub max_patches: usize,
    pub step: f64,
    pub tolerance: f64,
    pub tau_global: f64,
    pub tau_local: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            max_batch: 8,
            max_dim: 16,
            max_patches: 25,
            step: 1e-5,
            tolerance: 1e-4,
            tau_global: HyperParams::DEFAULT_TAU_GLOBAL,
            tau_local: HyperParams::DEFAULT_TAU_LOCAL,
        }
    }
}

/// Deliberate corruption of the analytic gradient, used to prove the
/// checker can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tamper {
    #[default]
    None,
    FlipGradientSign,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed error for the check (absolute for value checks,
    /// relative for gradient checks).
    pub worst_error: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub config: CheckConfig,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`.
pub fn gradient_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let n2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / n2(analytic).max(n2(numeric)).max(1e-8)
}

/// Central differences of `f` with respect to every query and patch
/// component of the batch, in [`PairGrad::flatten`] order.
pub fn numeric_gradient(batch: &Batch, step: f64, mut f: impl FnMut(&Batch) -> Result<f64>) -> Result<Vec<f64>> {
    let mut work = batch.clone();
    let mut out = Vec::new();
    for i in 0..work.pairs.len() {
        let dim = work.pairs[i].query.vector.len();
        for c in 0..dim {
            out.push(central(&mut work, step, &mut f, |b| &mut b.pairs[i].query.vector[c])?);
        }
        for k in 0..work.pairs[i].grid.embeddings.len() {
            for c in 0..dim {
                out.push(central(&mut work, step, &mut f, |b| {
                    &mut b.pairs[i].grid.embeddings[k][c]
                })?);
            }
        }
    }
    Ok(out)
}

fn central(
    batch: &mut Batch,
    step: f64,
    f: &mut impl FnMut(&Batch) -> Result<f64>,
    param: impl Fn(&mut Batch) -> &mut f64,
) -> Result<f64> {
    let orig = *param(batch);
    *param(batch) = orig + step;
    let plus = f(batch);
    *param(batch) = orig - step;
    let minus = f(batch);
    *param(batch) = orig;
    Ok((plus? - minus?) / (2.0 * step))
}

fn flatten(grads: &[PairGrad], tamper: Tamper) -> Vec<f64> {
    let sign = match tamper {
        Tamper::None => 1.0,
        Tamper::FlipGradientSign => -1.0,
    };
    grads.iter().flat_map(PairGrad::flatten).map(|x| sign * x).collect()
}

/// Random instances whose max-pooling has a clear winner per component, so
/// finite differences never straddle an argmax switch.
pub struct InstanceGen {
    rng: SplitMix64,
    cfg: CheckConfig,
}

const ARGMAX_GAP: f64 = 1e-3;

impl InstanceGen {
    pub fn new(seed: u64, cfg: CheckConfig) -> Self {
        Self {
            rng: SplitMix64::new(seed),
            cfg,
        }
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.rng.below((hi - lo + 1) as u64) as usize
    }

    fn vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.rng.uniform(-1.0, 1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() > 0.05 {
                return v;
            }
        }
    }

    pub fn grid(&mut self, id: &str, dim: usize) -> PatchGrid {
        let max = self.cfg.max_patches.max(1);
        let rows = self.range(1, max.min(5));
        let cols = self.range(1, (max / rows).clamp(1, 5));
        let geometry = GridGeometry::exact(rows as u32, cols as u32, 10, 10);
        loop {
            let emb: Vec<Vec<f64>> = (0..rows * cols).map(|_| self.vector(dim)).collect();
            if clear_argmax(&emb) {
                return PatchGrid::new(id, geometry, emb).expect("generated grid is valid");
            }
        }
    }

    pub fn query(&mut self, dim: usize) -> QueryEmbedding {
        QueryEmbedding::from_vector("q", self.vector(dim)).expect("nonzero query")
    }

    pub fn dim(&mut self) -> usize {
        self.range(2, self.cfg.max_dim.max(2))
    }

    pub fn batch(&mut self, min_batch: usize, with_boxes: bool) -> Batch {
        let b = self.range(min_batch, self.cfg.max_batch.max(min_batch));
        let dim = self.dim();
        let pairs = (0..b)
            .map(|i| {
                let grid = self.grid(&format!("d{i}"), dim);
                let boxes = (with_boxes && self.rng.below(2) == 0).then(|| vec![self.bbox(&grid.geometry)]);
                TrainingPair {
                    query: self.query(dim),
                    grid,
                    boxes,
                }
            })
            .collect();
        Batch { pairs }
    }

    fn bbox(&mut self, g: &GridGeometry) -> BBox {
        let x1 = self.rng.below(g.img_w as u64) as u32;
        let y1 = self.rng.below(g.img_h as u64) as u32;
        let x2 = x1 + 1 + self.rng.below((g.img_w - x1) as u64) as u32;
        let y2 = y1 + 1 + self.rng.below((g.img_h - y1) as u64) as u32;
        BBox::new(x1, y1, x2, y2)
    }

    /// A non-empty positive set plus a random negative set from the rest;
    /// remaining patches abstain.
    pub fn sets(&mut self, n: usize) -> SupervisionSets {
        let mut s = SupervisionSets::default();
        let first = self.rng.below(n as u64) as usize;
        s.positive.insert(first);
        for k in (0..n).filter(|&k| k != first) {
            match self.rng.below(3) {
                0 => {
                    s.positive.insert(k);
                }
                1 => {
                    s.negative.insert(k);
                }
                _ => {}
            }
        }
        s
    }
}

fn clear_argmax(emb: &[Vec<f64>]) -> bool {
    if emb.len() < 2 {
        return true;
    }
    (0..emb[0].len()).all(|c| {
        let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in emb {
            if v[c] > best {
                second = best;
                best = v[c];
            } else if v[c] > second {
                second = v[c];
            }
        }
        best - second >= ARGMAX_GAP
    })
}

fn outcome(name: &str, worst: f64, limit: f64, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed: worst <= limit,
        worst_error: worst,
        detail,
    }
}

fn value_checks(cfg: &CheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut gen = InstanceGen::new(0, cfg.clone());

    let single = gen.batch(1, false);
    let single = Batch {
        pairs: single.pairs[..1].to_vec(),
    };
    let v = global_loss(&single, cfg.tau_global)?.value;
    out.push(outcome(
        "global_loss_single_pair_zero",
        v.abs(),
        0.0,
        format!("value {v:e}"),
    ));

    let mut worst = 0.0f64;
    for b in 2..=cfg.max_batch.max(2) {
        let pair = gen.batch(1, false).pairs.swap_remove(0);
        let batch = Batch { pairs: vec![pair; b] };
        let v = global_loss(&batch, cfg.tau_global)?.value;
        worst = worst.max((v - (b as f64).ln()).abs());
    }
    out.push(outcome(
        "global_loss_uniform_is_ln_b",
        worst,
        1e-9,
        "identical pairs, B = 2..".into(),
    ));

    let grid = PatchGrid::new(
        "d",
        GridGeometry::exact(1, 2, 10, 10),
        vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
    )?;
    let q = QueryEmbedding::from_vector("q", vec![1.0, 0.0])?;
    let sets = SupervisionSets {
        positive: [0].into(),
        negative: [1].into(),
    };
    let v = local_loss(&q, &grid, &sets, 0.25)?.value;
    let expected = (1.0 + (-8f64).exp()).ln();
    out.push(outcome(
        "local_loss_closed_form",
        (v - expected).abs(),
        1e-12,
        format!("value {v:e}, expected {expected:e}"),
    ));

    let sets = SupervisionSets {
        positive: [0, 1].into(),
        negative: Default::default(),
    };
    let v = local_loss(&q, &grid, &sets, cfg.tau_local)?.value;
    out.push(outcome(
        "local_loss_no_negatives_zero",
        v.abs(),
        0.0,
        format!("value {v:e}"),
    ));
    Ok(out)
}

fn gradient_checks(seed: u64, cfg: &CheckConfig, tamper: Tamper) -> Result<Vec<CheckOutcome>> {
    let mut gen = InstanceGen::new(seed, cfg.clone());
    let (mut g_worst, mut l_worst, mut c_worst) = (0.0f64, 0.0f64, 0.0f64);
    let hp = HyperParams {
        tau_global: cfg.tau_global,
        tau_local: cfg.tau_local,
        ..HyperParams::new(0.5)
    };

    for _ in 0..cfg.instances {
        let batch = gen.batch(1, false);
        let analytic = flatten(&global_loss(&batch, cfg.tau_global)?.grads, tamper);
        let numeric = numeric_gradient(&batch, cfg.step, |b| Ok(global_loss(b, cfg.tau_global)?.value))?;
        g_worst = g_worst.max(gradient_relative_error(&analytic, &numeric));

        let dim = gen.dim();
        let single = Batch {
            pairs: vec![TrainingPair {
                query: gen.query(dim),
                grid: gen.grid("d", dim),
                boxes: None,
            }],
        };
        let sets = gen.sets(single.pairs[0].grid.len());
        let eval = |b: &Batch| local_loss(&b.pairs[0].query, &b.pairs[0].grid, &sets, cfg.tau_local);
        let analytic = flatten(&[eval(&single)?.grad], tamper);
        let numeric = numeric_gradient(&single, cfg.step, |b| Ok(eval(b)?.value))?;
        l_worst = l_worst.max(gradient_relative_error(&analytic, &numeric));

        // Labels are resolved once and held fixed; resample until every pair
        // has a positive patch.
        let (batch, sets) = loop {
            let batch = gen.batch(1, true);
            let sets = resolve_supervision(&batch, hp.theta)?;
            if sets.iter().all(|s| !s.positive.is_empty()) {
                break (batch, sets);
            }
        };
        let analytic = flatten(&combined_loss_with_sets(&batch, &sets, &hp)?.gradients, tamper);
        let numeric = numeric_gradient(&batch, cfg.step, |b| {
            Ok(combined_loss_with_sets(b, &sets, &hp)?.combined)
        })?;
        c_worst = c_worst.max(gradient_relative_error(&analytic, &numeric));
    }

    let detail = format!("{} random instances, step {:e}", cfg.instances, cfg.step);
    Ok(vec![
        outcome("global_loss_gradient", g_worst, cfg.tolerance, detail.clone()),
        outcome("local_loss_gradient", l_worst, cfg.tolerance, detail.clone()),
        outcome("combined_loss_gradient", c_worst, cfg.tolerance, detail),
    ])
}

/// Runs every value and gradient check.
pub fn run_suite(seed: u64, cfg: &CheckConfig, tamper: Tamper) -> Result<SuiteReport> {
    let mut checks = value_checks(cfg)?;
    checks.extend(gradient_checks(seed, cfg, tamper)?);
    Ok(SuiteReport {
        seed,
        config: cfg.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
