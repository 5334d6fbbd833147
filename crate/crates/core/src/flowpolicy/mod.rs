//! Max-flow action policies over pruned level sets.
//!
//! Mass starts as `unit` quanta on the level-0 cell and is pushed one level
//! pair at a time. For the pair `(t, t+1)` the network is
//!
//! ```text
//! source -> cell of L_t          capacity = mass of the cell
//! cell   -> cell of L_{t+1}      one arc per transition, capacity = M_t
//! cell of L_{t+1} -> sink        capacity = ceil(M_t / |L_{t+1}|)
//! ```
//!
//! The sink capacities are reached by progressive filling rather than set
//! outright, so when exact uniformity is infeasible the split is the most
//! uniform one available instead of an arbitrary maximum flow. Filling
//! continues past the uniform capacity until all of `M_t` is routed; every
//! cell therefore forwards its whole mass and the per-action flow ratios
//! reproduce the flow exactly.

pub mod maxflow;

pub use maxflow::MaxFlow;

use crate::dynamics::reduced_step;
use crate::env::{footprint_in_collision, ClearanceMap};
use crate::geom::{Point, Pose};
use crate::levelsets::{
    build_reachability_graph, discretize_state, prune_inevitable_collisions, DiscretizationSpec, GridCell,
    LevelSetError, ReachabilityGraph, SafeLevelSets,
};
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

pub const DEFAULT_UNIT: i64 = 1_000_000;

/// Filling rounds before all sink capacities are lifted at once.
const MAX_FILL_ROUNDS: usize = 10_000;

/// Step divisor of the progressive filling; larger is fairer and slower.
pub const FILL_DIVISOR: i64 = 4;
/// Once less than `1 / FILL_TAIL` of the mass is left, active sinks are
/// raised by even shares of the whole remainder.
const FILL_TAIL: i64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
    #[error("level {0} is empty")]
    EmptyLevel(usize),
    #[error("unit must be positive")]
    BadUnit,
}

/// Free space everywhere; used for the environment-agnostic policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenSpace;

impl ClearanceMap for OpenSpace {
    fn clearance_at(&self, _p: Point) -> Option<f64> {
        Some(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeArc {
    /// Index of the source cell in `L_t`.
    pub cell: usize,
    /// Position of the transition in that cell's out-list.
    pub slot: usize,
    pub action: usize,
    /// Index of the target cell in `L_{t+1}`.
    pub to: usize,
    pub arc: usize,
}

/// Flow network for one level pair.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    pub t: usize,
    pub net: MaxFlow,
    pub source: usize,
    pub sink: usize,
    /// `source -> cell` arc per cell of `L_t`.
    pub source_arcs: Vec<usize>,
    pub edge_arcs: Vec<EdgeArc>,
    /// `cell -> sink` arc per cell of `L_{t+1}`.
    pub sink_arcs: Vec<usize>,
    pub total_mass: i64,
    pub sink_capacity: i64,
}

impl FlowNetwork {
    fn target_node(&self, j: usize) -> usize {
        2 + self.source_arcs.len() + j
    }
}

/// Network for the pair `(t, t+1)` given the masses on `L_t`.
pub fn build_flow_network(g: &ReachabilityGraph, t: usize, masses: &[i64]) -> Result<FlowNetwork, FlowError> {
    let from = &g.levels[t];
    let to = g.levels.get(t + 1).ok_or(FlowError::EmptyLevel(t + 1))?;
    if from.is_empty() {
        return Err(FlowError::EmptyLevel(t));
    }
    if to.is_empty() {
        return Err(FlowError::EmptyLevel(t + 1));
    }
    assert_eq!(masses.len(), from.len());
    let total: i64 = masses.iter().sum();
    let sink_capacity = (total + to.len() as i64 - 1) / to.len() as i64;
    let mut net = MaxFlow::new(2 + from.len() + to.len());
    let mut fnw = FlowNetwork {
        t,
        net: MaxFlow::default(),
        source: 0,
        sink: 1,
        source_arcs: Vec::with_capacity(from.len()),
        edge_arcs: Vec::new(),
        sink_arcs: Vec::with_capacity(to.len()),
        total_mass: total,
        sink_capacity,
    };
    for (i, m) in masses.iter().enumerate() {
        fnw.source_arcs.push(net.add_arc(0, 2 + i, *m));
    }
    for (i, out) in from.out.iter().enumerate() {
        for (slot, tr) in out.iter().enumerate() {
            let arc = net.add_arc(2 + i, 2 + from.len() + tr.to, total);
            fnw.edge_arcs.push(EdgeArc {
                cell: i,
                slot,
                action: tr.action,
                to: tr.to,
                arc,
            });
        }
    }
    for j in 0..to.len() {
        fnw.sink_arcs.push(net.add_arc(2 + from.len() + j, 1, sink_capacity));
    }
    fnw.net = net;
    Ok(fnw)
}

/// Outcome of one level-pair solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub t: usize,
    pub total_mass: i64,
    pub sink_capacity: i64,
    /// Max-flow value under the uniform sink capacities.
    pub uniform_value: i64,
    /// Capacity-raising rounds needed to route the remainder.
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Integer mass per cell, per level.
    pub masses: Vec<Vec<i64>>,
    /// Flow per transition, indexed like `graph.levels[t].out[cell]`.
    pub edge_flows: Vec<Vec<Vec<i64>>>,
    pub stats: Vec<PairStats>,
}

/// Progressive filling: sink capacities start at zero and the sinks that can
/// still absorb flow are raised together in steps of `remaining / (active * divisor)`.
/// Sinks that stop absorbing keep their allocation, which yields the max-min
/// fair (most uniform) split that the supplies allow. Returns the value reached
/// when the uniform capacity `ceil(M_t / |L_{t+1}|)` was first binding, and the
/// number of rounds.
fn route_all(fnw: &mut FlowNetwork, divisor: i64) -> (i64, usize) {
    let (s, k) = (fnw.source, fnw.sink);
    let m = fnw.total_mass;
    let ucap = fnw.sink_capacity;
    for &a in &fnw.sink_arcs {
        fnw.net.set_capacity(a, 0);
    }
    let mut value = 0;
    let mut rounds = 0;
    let mut uniform_value = None;
    let mut active: Vec<usize> = (0..fnw.sink_arcs.len()).collect();
    while value < m {
        if active.is_empty() || rounds >= MAX_FILL_ROUNDS {
            for &a in &fnw.sink_arcs {
                fnw.net.set_capacity(a, m);
            }
            value += fnw.net.solve(s, k);
            rounds += 1;
            break;
        }
        let left = m - value;
        let n = active.len() as i64;
        // the last sliver goes out in even shares instead of a round per quarter
        let delta = if left <= m / FILL_TAIL { (left + n - 1) / n } else { (left / (n * divisor)).max(1) };
        for &j in &active {
            let a = fnw.sink_arcs[j];
            let cap = fnw.net.capacity(a);
            let raised = if cap < ucap { (cap + delta).min(ucap) } else { cap + delta };
            fnw.net.set_capacity(a, raised);
        }
        value += fnw.net.solve(s, k);
        rounds += 1;
        let reach = fnw.net.residual_reachable(s);
        active.retain(|&j| reach[fnw.target_node(j)]);
        if uniform_value.is_none() && active.iter().all(|&j| fnw.net.capacity(fnw.sink_arcs[j]) >= ucap) {
            uniform_value = Some(value);
        }
    }
    (uniform_value.unwrap_or(value), rounds)
}

/// Sequential per-level-pair max-flow over a pruned graph.
pub fn solve_level_flows(g: &ReachabilityGraph, unit: i64) -> Result<FlowSolution, FlowError> {
    if unit <= 0 {
        return Err(FlowError::BadUnit);
    }
    if let Some(t) = g.levels.iter().position(|l| l.is_empty()) {
        return Err(FlowError::EmptyLevel(t));
    }
    let n = g.horizon();
    let mut masses = vec![vec![unit]];
    let mut edge_flows = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(n);
    for t in 0..n {
        let mut fnw = build_flow_network(g, t, &masses[t])?;
        let (uniform_value, rounds) = route_all(&mut fnw, FILL_DIVISOR);
        let mut flows: Vec<Vec<i64>> = g.levels[t].out.iter().map(|o| vec![0; o.len()]).collect();
        for e in &fnw.edge_arcs {
            flows[e.cell][e.slot] = fnw.net.flow(e.arc);
        }
        masses.push(fnw.sink_arcs.iter().map(|&a| fnw.net.flow(a)).collect());
        edge_flows.push(flows);
        stats.push(PairStats {
            t,
            total_mass: fnw.total_mass,
            sink_capacity: fnw.sink_capacity,
            uniform_value,
            rounds,
        });
    }
    Ok(FlowSolution {
        masses,
        edge_flows,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub level: usize,
    /// Probability per action index of the owning spec.
    pub probs: Vec<f64>,
    /// True when the distribution is a fallback rather than flow-derived.
    pub fallback: bool,
}

/// Action distribution per discretized cell. Each cell belongs to exactly one
/// level, so entries are keyed by cell and remember their level.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    pub spec: DiscretizationSpec,
    pub map_hash: Option<u64>,
    entries: HashMap<GridCell, PolicyEntry>,
    order: Vec<GridCell>,
}

/// Which rule produced a queried distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryTier {
    Exact,
    OtherLevel,
    CollisionFree,
    Uniform,
}

fn uniform_over(n: usize, allowed: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; n];
    for &a in allowed {
        p[a] = 1.0 / allowed.len() as f64;
    }
    p
}

/// Actions whose one-step successor from `pose` is collision-free. With no
/// map every action qualifies.
pub fn collision_free_actions(
    pose: &Pose,
    spec: &DiscretizationSpec,
    map: Option<&dyn ClearanceMap>,
    footprint_radius: f64,
) -> Vec<usize> {
    let dynp = spec.dynamics();
    (0..spec.actions.len())
        .filter(|&a| match map {
            None => true,
            Some(m) => {
                let next = reduced_step(pose, spec.actions[a], spec.speed, &dynp);
                !footprint_in_collision(m, next.position(), footprint_radius)
            }
        })
        .collect()
}

impl FlowPolicy {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cell: &GridCell) -> Option<&PolicyEntry> {
        self.entries.get(cell)
    }

    /// Entries in level order.
    pub fn iter(&self) -> impl Iterator<Item = (&GridCell, &PolicyEntry)> {
        self.order.iter().map(|c| (c, &self.entries[c]))
    }

    fn insert(&mut self, cell: GridCell, entry: PolicyEntry) {
        if self.entries.insert(cell, entry).is_none() {
            self.order.push(cell);
        }
    }

    /// Distribution for a pose at step `t`: the stored entry for `(t, cell)`,
    /// else the same cell stored at another level, else uniform over
    /// collision-free one-step actions, else uniform over all actions.
    pub fn query(
        &self,
        pose: &Pose,
        t: usize,
        map: Option<&dyn ClearanceMap>,
        footprint_radius: f64,
    ) -> (Cow<'_, [f64]>, QueryTier) {
        if let Ok(cell) = discretize_state(pose, &self.spec) {
            if let Some(e) = self.entries.get(&cell) {
                let tier = if e.level == t {
                    QueryTier::Exact
                } else {
                    QueryTier::OtherLevel
                };
                return (Cow::Borrowed(&e.probs), tier);
            }
        }
        let n = self.spec.actions.len();
        let free = collision_free_actions(pose, &self.spec, map, footprint_radius);
        if free.is_empty() {
            let all: Vec<usize> = (0..n).collect();
            (Cow::Owned(uniform_over(n, &all)), QueryTier::Uniform)
        } else {
            (Cow::Owned(uniform_over(n, &free)), QueryTier::CollisionFree)
        }
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            spec: self.spec.clone(),
            map_hash: self.map_hash,
            entries: self
                .iter()
                .map(|(c, e)| PolicyRecord {
                    key: [e.level as i32, c.ix, c.iy, c.itheta],
                    probs: e.probs.clone(),
                    fallback: e.fallback,
                })
                .collect(),
        }
    }

    pub fn from_file(file: PolicyFile) -> Self {
        let mut p = FlowPolicy {
            spec: file.spec,
            map_hash: file.map_hash,
            entries: HashMap::new(),
            order: Vec::new(),
        };
        for r in file.entries {
            p.insert(
                GridCell::new(r.key[1], r.key[2], r.key[3]),
                PolicyEntry {
                    level: r.key[0] as usize,
                    probs: r.probs,
                    fallback: r.fallback,
                },
            );
        }
        p
    }
}

/// JSON form of a policy: `key` is `[t, ix, iy, itheta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub spec: DiscretizationSpec,
    pub map_hash: Option<u64>,
    pub entries: Vec<PolicyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub key: [i32; 4],
    pub probs: Vec<f64>,
    pub fallback: bool,
}

/// Policy from flows: action probability = transition flow / cell outflow.
/// Cells without outflow get the fallback distribution.
pub fn extract_policy(
    g: &ReachabilityGraph,
    flows: &FlowSolution,
    map: Option<&dyn ClearanceMap>,
    footprint_radius: f64,
) -> FlowPolicy {
    let spec = &g.spec;
    let n = spec.actions.len();
    let mut policy = FlowPolicy {
        spec: spec.clone(),
        map_hash: None,
        entries: HashMap::new(),
        order: Vec::new(),
    };
    for (t, level) in g.levels.iter().enumerate() {
        for i in 0..level.len() {
            let out = &level.out[i];
            let cell_flows = flows.edge_flows.get(t).map(|f| f[i].as_slice()).unwrap_or(&[]);
            let outflow: i64 = cell_flows.iter().sum();
            let entry = if outflow > 0 {
                let mut probs = vec![0.0; n];
                for (tr, f) in out.iter().zip(cell_flows) {
                    probs[tr.action] += *f as f64 / outflow as f64;
                }
                PolicyEntry {
                    level: t,
                    probs,
                    fallback: false,
                }
            } else if !out.is_empty() {
                let actions: Vec<usize> = out.iter().map(|tr| tr.action).collect();
                PolicyEntry {
                    level: t,
                    probs: uniform_over(n, &actions),
                    fallback: true,
                }
            } else {
                let mut free = collision_free_actions(&level.reps[i], spec, map, footprint_radius);
                if free.is_empty() {
                    free = (0..n).collect();
                }
                PolicyEntry {
                    level: t,
                    probs: uniform_over(n, &free),
                    fallback: true,
                }
            };
            policy.insert(level.cells[i], entry);
        }
    }
    policy
}

/// Everything produced by the level-set and flow pipeline for one query.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub graph: ReachabilityGraph,
    pub level_sets: SafeLevelSets,
    pub flows: FlowSolution,
    pub policy: FlowPolicy,
}

fn pipeline(
    map: &dyn ClearanceMap,
    x0: &Pose,
    spec: &DiscretizationSpec,
    footprint_radius: f64,
    unit: i64,
) -> Result<PolicyBundle, FlowError> {
    let raw = build_reachability_graph(map, x0, spec, footprint_radius)?;
    let graph = prune_inevitable_collisions(&raw)?;
    let flows = solve_level_flows(&graph, unit)?;
    let policy = extract_policy(&graph, &flows, Some(map), footprint_radius);
    Ok(PolicyBundle {
        level_sets: graph.safe_level_sets(),
        graph,
        flows,
        policy,
    })
}

/// C-Free-Uniform policy on a local map from `x0`.
pub fn compute_cfu_policy<M: ClearanceMap>(
    map: &M,
    x0: &Pose,
    spec: &DiscretizationSpec,
    footprint_radius: f64,
) -> Result<PolicyBundle, FlowError> {
    pipeline(map, x0, spec, footprint_radius, DEFAULT_UNIT)
}

/// Obstacle-free policy from the origin. Depends only on the spec.
pub fn compute_cuniform_policy(spec: &DiscretizationSpec) -> Result<PolicyBundle, FlowError> {
    pipeline(&OpenSpace, &Pose::default(), spec, 0.0, DEFAULT_UNIT)
}

/// Process-wide cache of obstacle-free policies keyed by spec.
pub fn cached_cuniform_policy(spec: &DiscretizationSpec) -> Result<Arc<FlowPolicy>, FlowError> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<FlowPolicy>>>> = OnceLock::new();
    let key = serde_json::to_string(spec).expect("spec serializes");
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().expect("cache lock").get(&key) {
        return Ok(p.clone());
    }
    let policy = Arc::new(compute_cuniform_policy(spec)?.policy);
    cache.lock().expect("cache lock").insert(key, policy.clone());
    Ok(policy)
}
