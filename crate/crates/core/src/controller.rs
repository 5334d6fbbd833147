//! Trajectory cost, the MPPI weighted update, and the four control loops.
//!
//! Everything here works in the robot frame of the current local map: the
//! robot sits at the origin facing `+x` and the goal is expressed in that frame.

use crate::dynamics::{clamp_control, rollout, Control, DynamicsParams, State, Trajectory};
use crate::env::{ClearanceMap, LocalPerception};
use crate::flowpolicy::{cached_cuniform_policy, compute_cfu_policy, FlowError, FlowPolicy};
use crate::geom::{Point, Pose};
use crate::levelsets::DiscretizationSpec;
use crate::samplers::{sample_perturbations, sample_policy_trajectories, PerturbationSpec, PolicyRollout};
use crate::seeds::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub w_dist: f64,
    pub w_term: f64,
    /// Footprint occupancy above this counts as a collision.
    pub o_thresh: f64,
    pub p_obs: f64,
    pub occupancy_scale: f64,
    pub goal_tolerance: f64,
    pub footprint_radius: f64,
    /// Clearance beyond the footprint over which occupancy decays to zero (m).
    pub clearance_margin: f64,
    /// Collision checks per transition, evenly spaced along the chord and
    /// ending at the state itself. 1 checks states only.
    pub collision_substeps: usize,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            w_dist: 1.0,
            w_term: 10.0,
            o_thresh: 0.9,
            p_obs: 1e6,
            occupancy_scale: 50.0,
            goal_tolerance: 0.3,
            footprint_radius: 0.3,
            clearance_margin: 0.5,
            collision_substeps: 2,
        }
    }
}

/// Occupancy seen by a footprint centered at `p`: 1 when the footprint
/// overlaps an obstacle or leaves the map, otherwise `o_thresh` scaled down
/// linearly to 0 as the clearance grows to `clearance_margin`. Exceeds
/// `o_thresh` exactly when the footprint collides.
pub fn footprint_occupancy<M: ClearanceMap + ?Sized>(map: &M, p: Point, cp: &CostParams) -> f64 {
    match map.clearance_at(p) {
        None => 1.0,
        Some(d) if d < cp.footprint_radius => 1.0,
        Some(d) => {
            let gap = d - cp.footprint_radius;
            if cp.clearance_margin <= 0.0 {
                return 0.0;
            }
            cp.o_thresh * (1.0 - gap / cp.clearance_margin).clamp(0.0, 1.0)
        }
    }
}

/// Running distance and clearance cost plus a terminal distance cost.
/// A colliding state adds `p_obs` and ends the sum; the first state inside
/// the goal tolerance adds its own running cost and ends the sum without a
/// terminal term.
pub fn trajectory_cost<M: ClearanceMap + ?Sized>(traj: &Trajectory, goal: Point, map: &M, cp: &CostParams) -> f64 {
    let mut cost = 0.0;
    let sub = cp.collision_substeps.max(1);
    let mut prev: Option<Point> = None;
    for s in &traj.states {
        let p = s.position();
        if let Some(q) = prev {
            // a fast state sequence can jump over a thin corner
            for k in 1..sub {
                let f = k as f64 / sub as f64;
                let m = Point::new(q.x + f * (p.x - q.x), q.y + f * (p.y - q.y));
                if footprint_occupancy(map, m, cp) > cp.o_thresh {
                    return cost + cp.p_obs;
                }
            }
        }
        prev = Some(p);
        let occ = footprint_occupancy(map, p, cp);
        if occ > cp.o_thresh {
            return cost + cp.p_obs;
        }
        let d2 = p.dist_sq(goal);
        cost += cp.w_dist * d2 + cp.occupancy_scale * occ;
        if d2.sqrt() <= cp.goal_tolerance {
            return cost;
        }
    }
    match traj.states.last() {
        Some(s) => cost + cp.w_term * s.position().dist_sq(goal),
        None => cost,
    }
}

/// True when the cost includes the collision penalty.
pub fn cost_collides(cost: f64, cp: &CostParams) -> bool {
    cost >= cp.p_obs
}

/// `softmax(-costs / lambda)` computed after subtracting the minimum cost.
pub fn softmax_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|c| (-(c - min) / lambda).exp()).collect();
    let z: f64 = w.iter().sum();
    for x in &mut w {
        *x /= z;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiParams {
    pub k_mppi: usize,
    pub lambda: f64,
    pub n_opt: usize,
    /// Policy samples for the hybrid initialization.
    pub k_init: usize,
}

impl Default for MppiParams {
    fn default() -> Self {
        Self {
            k_mppi: 256,
            lambda: 0.5,
            n_opt: 1,
            k_init: 256,
        }
    }
}

impl MppiParams {
    /// Budget split: hybrids put half into initialization and spread the
    /// other half over the refinement iterations; pure variants spread all of it.
    pub fn for_budget(kind: ControllerKind, budget: usize, n_opt: usize, lambda: f64) -> Self {
        let n_opt = n_opt.max(1);
        let (k_init, k_mppi) = if kind.is_hybrid() {
            (budget / 2, (budget / 2 / n_opt).max(1))
        } else {
            (0, (budget / n_opt).max(1))
        };
        Self {
            k_mppi,
            lambda,
            n_opt,
            k_init: k_init.max(usize::from(kind.is_hybrid())),
        }
    }

    pub fn budget(&self, kind: ControllerKind) -> usize {
        self.n_opt * self.k_mppi + if kind.is_hybrid() { self.k_init } else { 0 }
    }
}

/// Result of one MPPI iteration.
#[derive(Debug, Clone)]
pub struct MppiStep {
    pub nominal: Vec<Control>,
    pub costs: Vec<f64>,
    pub weights: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

/// One importance-weighted update of `nominal`.
#[allow(clippy::too_many_arguments)]
pub fn mppi_update<M: ClearanceMap + Sync + ?Sized>(
    nominal: &[Control],
    x: &State,
    goal: Point,
    map: &M,
    mp: &MppiParams,
    cp: &CostParams,
    noise: &PerturbationSpec,
    dynamics: &DynamicsParams,
    seed: u64,
) -> MppiStep {
    let samples = sample_perturbations(nominal, noise, mp.k_mppi, seed, dynamics);
    let trajectories: Vec<Trajectory> = samples.par_iter().map(|s| rollout(x, &s.controls, dynamics)).collect();
    let costs: Vec<f64> = trajectories.par_iter().map(|t| trajectory_cost(t, goal, map, cp)).collect();
    let weights = softmax_weights(&costs, mp.lambda);
    let mut next = nominal.to_vec();
    for (w, s) in weights.iter().zip(&samples) {
        for (u, e) in next.iter_mut().zip(&s.noise) {
            u.a += w * e.a;
            u.delta += w * e.delta;
        }
    }
    let nominal = next.iter().map(|u| clamp_control(u, dynamics)).collect();
    MppiStep {
        nominal,
        costs,
        weights,
        trajectories,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Mppi,
    #[serde(rename = "logmppi")]
    LogMppi,
    CuMppi,
    CfuMppi,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Mppi, Self::LogMppi, Self::CuMppi, Self::CfuMppi];

    pub fn is_hybrid(self) -> bool {
        matches!(self, Self::CuMppi | Self::CfuMppi)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mppi => "mppi",
            Self::LogMppi => "logmppi",
            Self::CuMppi => "cu-mppi",
            Self::CfuMppi => "cfu-mppi",
        }
    }

    pub fn noise(self) -> PerturbationSpec {
        match self {
            Self::LogMppi => PerturbationSpec::normal_lognormal(),
            _ => PerturbationSpec::gaussian(),
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown controller '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    pub budget: usize,
    pub n_opt: usize,
    pub lambda: f64,
    /// Planning horizon in steps of `dynamics.dt`.
    pub horizon: usize,
    pub dynamics: DynamicsParams,
    pub cost: CostParams,
    /// Overrides the kind's default perturbation.
    pub noise: Option<PerturbationSpec>,
    pub discretization: DiscretizationSpec,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            budget: 512,
            n_opt: 1,
            lambda: 0.5,
            horizon: 6,
            dynamics: DynamicsParams::default(),
            cost: CostParams::default(),
            noise: None,
            discretization: DiscretizationSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub best_cost: f64,
    /// Rollouts of this step whose cost has no collision penalty.
    pub collision_free: usize,
    pub rollouts: usize,
    /// The CFU policy had no safe horizon and the step ran as plain MPPI.
    pub degraded: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct ControllerOutput {
    pub control: Control,
    pub nominal: Vec<Control>,
    pub diagnostics: Diagnostics,
    /// Rollout of the updated nominal from the current state.
    pub planned: Trajectory,
    /// Every rollout evaluated this step (only when recording is enabled).
    pub samples: Vec<Trajectory>,
}

/// Receding-horizon controller with a persisted nominal sequence.
#[derive(Debug, Clone)]
pub struct Controller {
    pub kind: ControllerKind,
    pub params: ControllerParams,
    pub record_samples: bool,
    nominal: Vec<Control>,
    cuniform: Option<Arc<FlowPolicy>>,
}

impl Controller {
    pub fn new(kind: ControllerKind, params: ControllerParams) -> Self {
        let nominal = vec![Control::default(); params.horizon];
        Self {
            kind,
            params,
            record_samples: false,
            nominal,
            cuniform: None,
        }
    }

    pub fn nominal(&self) -> &[Control] {
        &self.nominal
    }

    pub fn mppi_params(&self) -> MppiParams {
        MppiParams::for_budget(self.kind, self.params.budget, self.params.n_opt, self.params.lambda)
    }

    fn shift_nominal(&mut self) {
        if let Some(last) = self.nominal.last().copied() {
            self.nominal.rotate_left(1);
            *self.nominal.last_mut().expect("non-empty") = last;
        }
    }

    fn policy_for(&mut self, map: &LocalPerception, speed: f64) -> Result<Arc<FlowPolicy>, FlowError> {
        let spec = &self.params.discretization;
        match self.kind {
            ControllerKind::CfuMppi => {
                // level sets at the speed the samples will be rolled out with,
                // as long as a step still leaves its cell
                let spec = if speed * spec.dt > 2.0 * spec.cell_xy {
                    spec.scaled(speed, spec.dt, spec.horizon)
                } else {
                    spec.clone()
                };
                let bundle = compute_cfu_policy(map, &Pose::default(), &spec, self.params.cost.footprint_radius)?;
                let mut policy = bundle.policy;
                policy.map_hash = Some(map.content_hash());
                Ok(Arc::new(policy))
            }
            _ => {
                if self.cuniform.is_none() {
                    self.cuniform = Some(cached_cuniform_policy(spec)?);
                }
                Ok(self.cuniform.clone().expect("just set"))
            }
        }
    }

    /// One control cycle from robot-frame state `x` (position at the origin,
    /// heading zero) towards robot-frame `goal`.
    pub fn control_step(&mut self, x: &State, goal: Point, map: &LocalPerception, seed: u64) -> ControllerOutput {
        let started = Instant::now();
        let p = self.params.clone();
        let noise = p.noise.unwrap_or_else(|| self.kind.noise());
        let mut mp = self.mppi_params();
        let mut diag = Diagnostics {
            best_cost: f64::INFINITY,
            ..Diagnostics::default()
        };
        let mut samples = Vec::new();

        let policy = if self.kind.is_hybrid() {
            match self.policy_for(map, x.v) {
                Ok(policy) => Some(policy),
                Err(e) => {
                    log::debug!("{}: falling back to MPPI: {e}", self.kind.name());
                    diag.degraded = true;
                    mp = MppiParams::for_budget(ControllerKind::Mppi, p.budget, p.n_opt, p.lambda);
                    None
                }
            }
        } else {
            None
        };

        if let Some(policy) = policy {
            let fallback: Option<&(dyn ClearanceMap + Sync)> = match self.kind {
                ControllerKind::CfuMppi => Some(map),
                _ => None,
            };
            let r = PolicyRollout {
                policy: &policy,
                fallback_map: fallback,
                footprint_radius: p.cost.footprint_radius,
                speed: x.v,
                horizon: p.horizon,
                dynamics: p.dynamics,
            };
            let candidates = sample_policy_trajectories(&r, x, mp.k_init, derive_seed(seed, &["init"]));
            let costs: Vec<f64> = candidates
                .par_iter()
                .map(|t| trajectory_cost(t, goal, map, &p.cost))
                .collect();
            let best = argmin(&costs);
            self.nominal = candidates[best].controls.clone();
            diag.best_cost = costs[best];
            diag.collision_free += costs.iter().filter(|c| !cost_collides(**c, &p.cost)).count();
            diag.rollouts += candidates.len();
            if self.record_samples {
                samples.extend(candidates);
            }
        } else {
            self.shift_nominal();
        }

        for i in 0..mp.n_opt {
            let step = mppi_update(
                &self.nominal,
                x,
                goal,
                map,
                &mp,
                &p.cost,
                &noise,
                &p.dynamics,
                derive_seed(seed, &["mppi", &i.to_string()]),
            );
            diag.best_cost = diag.best_cost.min(step.costs.iter().copied().fold(f64::INFINITY, f64::min));
            diag.collision_free += step.costs.iter().filter(|c| !cost_collides(**c, &p.cost)).count();
            diag.rollouts += step.costs.len();
            self.nominal = step.nominal;
            if self.record_samples {
                samples.extend(step.trajectories);
            }
        }

        let planned = rollout(x, &self.nominal, &p.dynamics);
        diag.wall_time_s = started.elapsed().as_secs_f64();
        ControllerOutput {
            control: self.nominal[0],
            nominal: self.nominal.clone(),
            diagnostics: diag,
            planned,
            samples,
        }
    }
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x < xs[best] {
            best = i;
        }
    }
    best
}
