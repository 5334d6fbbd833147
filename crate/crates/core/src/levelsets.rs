//! Discretized reachability over the fixed-speed pose space.
//!
//! Level `t` holds the cells whose earliest collision-free arrival time is `t`
//! steps. Each cell keeps the continuous pose that first reached it as its
//! representative; successors are always propagated from representatives.

use crate::dynamics::{reduced_step, DynamicsParams};
use crate::env::{footprint_in_collision, ClearanceMap};
use crate::geom::{Point, Pose};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevelSetError {
    #[error("pose ({x:.3}, {y:.3}) lies outside the discretized window")]
    OutOfBounds { x: f64, y: f64 },
    #[error("initial pose is in collision")]
    StartInCollision,
    #[error("no safe horizon: every action sequence from the initial pose collides")]
    NoSafeHorizon,
    #[error("invalid discretization: {0}")]
    InvalidSpec(String),
}

/// Which points of a transition are checked for collision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionCheck {
    /// Only the arrival pose.
    #[default]
    Endpoint,
    /// The chord midpoint and the arrival pose.
    MidpointAndEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizationSpec {
    /// Cell side in x and y (m).
    pub cell_xy: f64,
    /// Number of heading bins over `(-pi, pi]`; bin 0 is centered on heading 0.
    pub theta_bins: usize,
    /// Steering angles (rad), symmetric about zero.
    pub actions: Vec<f64>,
    /// Number of steps `N`.
    pub horizon: usize,
    pub dt: f64,
    /// Fixed speed used for propagation (m/s).
    pub speed: f64,
    pub wheelbase: f64,
    /// Poses with `|x|` or `|y|` beyond this are outside the window (m).
    pub half_extent: f64,
    pub collision_check: CollisionCheck,
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        Self {
            cell_xy: 0.1,
            theta_bins: 36,
            actions: uniform_actions(21, 0.4),
            horizon: 6,
            dt: 0.2,
            speed: 2.5,
            wheelbase: 0.33,
            half_extent: 4.0,
            collision_check: CollisionCheck::Endpoint,
        }
    }
}

/// `n` evenly spaced steering angles over `[-max, max]`.
pub fn uniform_actions(n: usize, max: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -max + 2.0 * max * i as f64 / (n - 1) as f64)
        .collect()
}

impl DiscretizationSpec {
    pub fn validate(&self) -> Result<(), LevelSetError> {
        let bad = |m: &str| Err(LevelSetError::InvalidSpec(m.to_string()));
        if !(self.cell_xy > 0.0) {
            return bad("cell_xy must be positive");
        }
        if self.theta_bins == 0 {
            return bad("theta_bins must be positive");
        }
        if self.actions.is_empty() {
            return bad("action set is empty");
        }
        let mut sorted = self.actions.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        if (0..n).any(|i| (sorted[i] + sorted[n - 1 - i]).abs() > 1e-12) {
            return bad("action set must be symmetric about zero");
        }
        if !(self.dt > 0.0) || !(self.wheelbase > 0.0) {
            return bad("dt and wheelbase must be positive");
        }
        Ok(())
    }

    pub fn theta_bin_width(&self) -> f64 {
        TAU / self.theta_bins as f64
    }

    /// Dynamics parameters matching this discretization (unbounded steering).
    pub fn dynamics(&self) -> DynamicsParams {
        let delta_max = self.actions.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        DynamicsParams {
            wheelbase: self.wheelbase,
            dt: self.dt,
            delta_max,
            ..DynamicsParams::default()
        }
    }

    /// Same discretization, different operating point.
    pub fn scaled(&self, speed: f64, dt: f64, horizon: usize) -> Self {
        Self {
            speed,
            dt,
            horizon,
            ..self.clone()
        }
    }
}

/// Index of a discretized pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct GridCell {
    pub ix: i32,
    pub iy: i32,
    pub itheta: i32,
}

impl GridCell {
    pub fn new(ix: i32, iy: i32, itheta: i32) -> Self {
        Self { ix, iy, itheta }
    }
}

impl From<[i32; 3]> for GridCell {
    fn from(v: [i32; 3]) -> Self {
        GridCell::new(v[0], v[1], v[2])
    }
}

impl From<GridCell> for [i32; 3] {
    fn from(c: GridCell) -> Self {
        [c.ix, c.iy, c.itheta]
    }
}

/// Floor-quantizes `x`, `y`; bins `theta` into bins centered on multiples of the bin width.
pub fn discretize_state(pose: &Pose, spec: &DiscretizationSpec) -> Result<GridCell, LevelSetError> {
    if !(pose.x.abs() <= spec.half_extent && pose.y.abs() <= spec.half_extent) {
        return Err(LevelSetError::OutOfBounds { x: pose.x, y: pose.y });
    }
    Ok(quantize(pose, spec))
}

/// [`discretize_state`] without the window check.
pub fn quantize(pose: &Pose, spec: &DiscretizationSpec) -> GridCell {
    let ix = (pose.x / spec.cell_xy).floor() as i32;
    let iy = (pose.y / spec.cell_xy).floor() as i32;
    let w = spec.theta_bin_width();
    let raw = (pose.theta / w + 0.5).floor() as i64;
    let itheta = raw.rem_euclid(spec.theta_bins as i64) as i32;
    GridCell { ix, iy, itheta }
}

/// Geometric center of a cell, heading at the bin center.
pub fn cell_center(cell: &GridCell, spec: &DiscretizationSpec) -> Pose {
    let w = spec.theta_bin_width();
    let mut theta = cell.itheta as f64 * w;
    if theta > PI {
        theta -= TAU;
    }
    Pose::new(
        (cell.ix as f64 + 0.5) * spec.cell_xy,
        (cell.iy as f64 + 0.5) * spec.cell_xy,
        theta,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub action: usize,
    /// Index into the next level.
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Level {
    pub cells: Vec<GridCell>,
    pub reps: Vec<Pose>,
    /// Outgoing transitions per cell, ordered by action index.
    pub out: Vec<Vec<Transition>>,
}

impl Level {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn push(&mut self, cell: GridCell, rep: Pose) -> usize {
        self.cells.push(cell);
        self.reps.push(rep);
        self.out.push(Vec::new());
        self.cells.len() - 1
    }
}

/// Layered DAG of discretized poses. `levels[t]` for `t = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachabilityGraph {
    pub spec: DiscretizationSpec,
    pub levels: Vec<Level>,
    #[serde(skip)]
    index: HashMap<GridCell, (usize, usize)>,
}

impl ReachabilityGraph {
    /// Graph from explicit levels; the cell index is rebuilt.
    pub fn from_parts(spec: DiscretizationSpec, levels: Vec<Level>) -> Self {
        let mut index = HashMap::new();
        for (t, level) in levels.iter().enumerate() {
            for (i, c) in level.cells.iter().enumerate() {
                index.insert(*c, (t, i));
            }
        }
        Self { spec, levels, index }
    }

    pub fn horizon(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    /// `(level, index within level)` of a cell, if present.
    pub fn locate(&self, cell: &GridCell) -> Option<(usize, usize)> {
        self.index.get(cell).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.levels.iter().flat_map(|l| &l.out).map(|o| o.len()).sum()
    }

    pub fn safe_level_sets(&self) -> SafeLevelSets {
        SafeLevelSets::new(
            self.levels.iter().map(|l| l.cells.clone()).collect(),
            self.levels.iter().map(|l| l.reps.clone()).collect(),
        )
    }

    /// Number of in-edges of every cell, per level.
    pub fn in_degrees(&self) -> Vec<Vec<usize>> {
        let mut deg: Vec<Vec<usize>> = self.levels.iter().map(|l| vec![0; l.len()]).collect();
        for t in 0..self.horizon() {
            for out in &self.levels[t].out {
                for tr in out {
                    deg[t + 1][tr.to] += 1;
                }
            }
        }
        deg
    }
}

/// Per-level cells (and representatives) that survive pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeLevelSets {
    pub levels: Vec<Vec<GridCell>>,
    pub reps: Vec<Vec<Pose>>,
    #[serde(skip)]
    membership: HashMap<GridCell, usize>,
}

impl SafeLevelSets {
    pub fn new(levels: Vec<Vec<GridCell>>, reps: Vec<Vec<Pose>>) -> Self {
        let mut membership = HashMap::new();
        for (t, cells) in levels.iter().enumerate() {
            for c in cells {
                membership.insert(*c, t);
            }
        }
        Self {
            levels,
            reps,
            membership,
        }
    }

    pub fn horizon(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn level_of(&self, cell: &GridCell) -> Option<usize> {
        self.membership.get(cell).copied()
    }

    pub fn contains(&self, t: usize, cell: &GridCell) -> bool {
        self.level_of(cell) == Some(t)
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(self) -> Self {
        Self::new(self.levels, self.reps)
    }
}

fn transition_collides<M: ClearanceMap + ?Sized>(
    map: &M,
    from: &Pose,
    to: &Pose,
    mode: CollisionCheck,
    radius: f64,
) -> bool {
    if footprint_in_collision(map, to.position(), radius) {
        return true;
    }
    match mode {
        CollisionCheck::Endpoint => false,
        CollisionCheck::MidpointAndEndpoint => {
            let mid = Point::new(0.5 * (from.x + to.x), 0.5 * (from.y + to.y));
            footprint_in_collision(map, mid, radius)
        }
    }
}

/// Breadth-first, earliest-arrival layering from `x0`. Transitions that
/// collide, leave the window, or land in a cell of an earlier (or the same)
/// level are dropped.
pub fn build_reachability_graph<M: ClearanceMap + ?Sized>(
    map: &M,
    x0: &Pose,
    spec: &DiscretizationSpec,
    footprint_radius: f64,
) -> Result<ReachabilityGraph, LevelSetError> {
    spec.validate()?;
    if footprint_in_collision(map, x0.position(), footprint_radius) {
        return Err(LevelSetError::StartInCollision);
    }
    let dyn_params = spec.dynamics();
    let c0 = discretize_state(x0, spec)?;
    let mut index: HashMap<GridCell, (usize, usize)> = HashMap::new();
    index.insert(c0, (0, 0));
    let mut levels = vec![Level::default()];
    levels[0].push(c0, *x0);

    for t in 0..spec.horizon {
        let mut next = Level::default();
        let current = &mut levels[t];
        for i in 0..current.len() {
            let rep = current.reps[i];
            for (a, &delta) in spec.actions.iter().enumerate() {
                let succ = reduced_step(&rep, delta, spec.speed, &dyn_params);
                if transition_collides(map, &rep, &succ, spec.collision_check, footprint_radius) {
                    continue;
                }
                let Ok(cell) = discretize_state(&succ, spec) else {
                    continue;
                };
                let to = match index.get(&cell) {
                    Some(&(lvl, j)) if lvl == t + 1 => j,
                    Some(_) => continue,
                    None => {
                        let j = next.push(cell, succ);
                        index.insert(cell, (t + 1, j));
                        j
                    }
                };
                current.out[i].push(Transition { action: a, to });
            }
        }
        levels.push(next);
    }
    Ok(ReachabilityGraph {
        spec: spec.clone(),
        levels,
        index,
    })
}

/// Removes cells from which no edge path reaches level `N`, then re-checks
/// reachability from level 0. Fails if the start cell itself is removed.
pub fn prune_inevitable_collisions(g: &ReachabilityGraph) -> Result<ReachabilityGraph, LevelSetError> {
    let n = g.horizon();
    let mut alive: Vec<Vec<bool>> = g.levels.iter().map(|l| vec![true; l.len()]).collect();
    // One backward sweep reaches the fixpoint because edges only go t -> t+1.
    for t in (0..n).rev() {
        for i in 0..g.levels[t].len() {
            alive[t][i] = g.levels[t].out[i].iter().any(|tr| alive[t + 1][tr.to]);
        }
    }
    for t in 0..n {
        let mut reached = vec![false; g.levels[t + 1].len()];
        for i in 0..g.levels[t].len() {
            if alive[t][i] {
                for tr in &g.levels[t].out[i] {
                    reached[tr.to] = true;
                }
            }
        }
        for (j, r) in reached.into_iter().enumerate() {
            alive[t + 1][j] &= r;
        }
    }
    if g.levels.is_empty() || g.levels[0].is_empty() || !alive[0][0] {
        return Err(LevelSetError::NoSafeHorizon);
    }

    let remap: Vec<Vec<Option<usize>>> = alive
        .iter()
        .map(|a| {
            let mut k = 0;
            a.iter()
                .map(|&keep| {
                    keep.then(|| {
                        k += 1;
                        k - 1
                    })
                })
                .collect()
        })
        .collect();
    let mut levels = Vec::with_capacity(g.levels.len());
    for (t, level) in g.levels.iter().enumerate() {
        let mut kept = Level::default();
        for i in 0..level.len() {
            if !alive[t][i] {
                continue;
            }
            let j = kept.push(level.cells[i], level.reps[i]);
            if t < n {
                kept.out[j] = level.out[i]
                    .iter()
                    .filter_map(|tr| remap[t + 1][tr.to].map(|to| Transition { action: tr.action, to }))
                    .collect();
            }
        }
        levels.push(kept);
    }
    Ok(ReachabilityGraph::from_parts(g.spec.clone(), levels))
}
