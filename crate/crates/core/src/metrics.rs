//! Uniformity metrics of a trajectory batch against the safe level sets.

use crate::levelsets::{quantize, DiscretizationSpec, GridCell, SafeLevelSets};
use crate::samplers::TrajectoryBatch;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("level {0} is empty")]
    EmptyLevel(usize),
    #[error("level {0} is beyond the level sets")]
    NoSuchLevel(usize),
}

/// Uniform mass on the cells of level `t`.
pub fn target_distribution(ls: &SafeLevelSets, t: usize) -> Result<Vec<(GridCell, f64)>, MetricsError> {
    let cells = ls.levels.get(t).ok_or(MetricsError::NoSuchLevel(t))?;
    if cells.is_empty() {
        return Err(MetricsError::EmptyLevel(t));
    }
    let m = 1.0 / cells.len() as f64;
    Ok(cells.iter().map(|c| (*c, m)).collect())
}

/// Cell counts of the states at index `t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: BTreeMap<GridCell, usize>,
    pub total: usize,
}

impl Histogram {
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn mass(&self, cell: &GridCell) -> f64 {
        match self.counts.get(cell) {
            Some(c) if self.total > 0 => *c as f64 / self.total as f64,
            _ => 0.0,
        }
    }

    pub fn probabilities(&self) -> impl Iterator<Item = (&GridCell, f64)> + '_ {
        self.counts.iter().map(move |(c, n)| (c, *n as f64 / self.total as f64))
    }
}

/// Histogram of states at step `t`. A trajectory stops contributing at its
/// first colliding state.
pub fn empirical_distribution(batch: &TrajectoryBatch, spec: &DiscretizationSpec, t: usize) -> Histogram {
    let mut h = Histogram::default();
    for (k, tr) in batch.trajectories.iter().enumerate() {
        if batch.first_collision[k].is_some_and(|c| c <= t) {
            continue;
        }
        let Some(s) = tr.states.get(t) else {
            continue;
        };
        *h.counts.entry(quantize(&s.pose(), spec)).or_insert(0) += 1;
        h.total += 1;
    }
    h
}

/// `KL(Q || P_smooth)` in nats, with `P_smooth = (P* + eps) / (1 + eps * n)` over
/// the union of `Q`'s support and the target cells. `None` when `Q` is empty.
pub fn kl_uniformity(q: &Histogram, target: &[(GridCell, f64)], epsilon: f64) -> Option<f64> {
    if q.is_empty() {
        return None;
    }
    let p: HashMap<GridCell, f64> = target.iter().copied().collect();
    let extra = q.counts.keys().filter(|c| !p.contains_key(c)).count();
    let universe = p.len() + extra;
    let norm = 1.0 + epsilon * universe as f64;
    let kl = q
        .probabilities()
        .map(|(c, qc)| {
            let ps = (p.get(c).copied().unwrap_or(0.0) + epsilon) / norm;
            qc * (qc / ps).ln()
        })
        .sum::<f64>();
    Some(kl.max(0.0))
}

/// Fraction of trajectories that never collide.
pub fn collision_free_ratio(batch: &TrajectoryBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let free = batch.first_collision.iter().filter(|c| c.is_none()).count();
    free as f64 / batch.len() as f64
}

/// Shannon entropy of `probs` divided by `ln(level_size)`, clamped to `[0, 1]`.
/// A single-cell level has ratio 1.
pub fn entropy_ratio(probs: &[f64], level_size: usize) -> f64 {
    if level_size <= 1 {
        return 1.0;
    }
    let h: f64 = probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    (h / (level_size as f64).ln()).clamp(0.0, 1.0)
}

/// Entropy ratio of `Q` restricted to the level's cells and renormalized.
/// `None` when no mass lands on the level.
pub fn level_entropy_ratio(q: &Histogram, ls: &SafeLevelSets, t: usize) -> Option<f64> {
    let inside: Vec<usize> = q
        .counts
        .iter()
        .filter(|(c, _)| ls.contains(t, c))
        .map(|(_, n)| *n)
        .collect();
    let total: usize = inside.iter().sum();
    if total == 0 {
        return None;
    }
    let probs: Vec<f64> = inside.iter().map(|n| *n as f64 / total as f64).collect();
    Some(entropy_ratio(&probs, ls.levels[t].len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub t: usize,
    pub level_size: usize,
    /// States counted at this step.
    pub samples: usize,
    /// Fraction of counted states that fall on the level.
    pub on_level: f64,
    pub kl: Option<f64>,
    pub entropy_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub sampler: String,
    pub budget: usize,
    pub seed: u64,
    /// Levels `1..=N`; level 0 is a single cell and carries no information.
    pub levels: Vec<LevelMetrics>,
    pub collision_free_ratio: f64,
    pub avg_kl: Option<f64>,
    pub avg_entropy_ratio: Option<f64>,
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-level KL and entropy ratio for `t = 1..=min(N, horizon)`, and their means.
pub fn uniformity_report(
    batch: &TrajectoryBatch,
    ls: &SafeLevelSets,
    spec: &DiscretizationSpec,
    sampler: &str,
    budget: usize,
    seed: u64,
    epsilon: f64,
) -> UniformityReport {
    let last = ls.horizon().min(batch.horizon());
    let mut levels = Vec::with_capacity(last);
    for t in 1..=last {
        let q = empirical_distribution(batch, spec, t);
        let (kl, er) = match target_distribution(ls, t) {
            Ok(target) => (kl_uniformity(&q, &target, epsilon), level_entropy_ratio(&q, ls, t)),
            Err(_) => (None, None),
        };
        let on: usize = q.counts.iter().filter(|(c, _)| ls.contains(t, c)).map(|(_, n)| n).sum();
        levels.push(LevelMetrics {
            t,
            level_size: ls.levels[t].len(),
            samples: q.total,
            on_level: if q.total > 0 { on as f64 / q.total as f64 } else { 0.0 },
            kl,
            entropy_ratio: er,
        });
    }
    UniformityReport {
        sampler: sampler.to_string(),
        budget,
        seed,
        collision_free_ratio: collision_free_ratio(batch),
        avg_kl: mean_defined(levels.iter().map(|l| l.kl)),
        avg_entropy_ratio: mean_defined(levels.iter().map(|l| l.entropy_ratio)),
        levels,
    }
}

impl UniformityReport {
    /// One row per level.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sampler", "budget", "seed", "t", "level_size", "samples", "on_level", "kl", "entropy_ratio"])?;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        for l in &self.levels {
            w.write_record([
                self.sampler.clone(),
                self.budget.to_string(),
                self.seed.to_string(),
                l.t.to_string(),
                l.level_size.to_string(),
                l.samples.to_string(),
                format!("{:.6}", l.on_level),
                opt(l.kl),
                opt(l.entropy_ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
