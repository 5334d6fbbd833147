//! Experiment harnesses: uniformity, parameter scaling, single-frame planning
//! and closed-loop navigation, plus the task generation, configuration and
//! result persistence they share.

mod astar;
mod navigation;
mod single_frame;
pub mod svg;
mod tasks;
mod uniformity;

pub use astar::{a_star, dijkstra, inflated_grid, octile, path_cells_length, Cell};
pub use navigation::{
    check_navigation, run_episode, run_navigation, summarize_navigation, Episode, NavigationRow, NavigationSummary,
    NavigationTable, Outcome, TrialResult,
};
pub use single_frame::{check_single_frame, run_single_frame, SingleFrameRow, SingleFrameSummary, SingleFrameTable};
pub use tasks::{compute_navigation_tasks, NavigationTask};
pub use uniformity::{
    check_scaling, check_uniformity, run_scaling, run_uniformity, ScalingRow, ScalingSummary, ScalingTable, UniformityRow,
    UniformitySummary, UniformityTable,
};

use crate::controller::{ControllerKind, ControllerParams, CostParams};
use crate::dynamics::{Control, DynamicsParams, State, Trajectory};
use crate::env::{
    generate_cluttered_environment, oracle_local_maps, sample_free_poses, scan_to_local_maps, simulate_lidar,
    ClearanceMap, EnvError, GenerationSpec, LocalMapSpec, LocalPerception, PolygonEnvironment,
};
use crate::flowpolicy::{compute_cfu_policy, FlowError, FlowPolicy, PolicyBundle};
use crate::geom::Pose;
use crate::levelsets::DiscretizationSpec;
use crate::samplers::{sample_perturbed_trajectories, sample_policy_trajectories, PerturbationSpec, PolicyRollout};
use crate::seeds::{derive_seed, stream_rng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("no connected pair of free poses")]
    NoConnectedPair,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Trajectory generators compared in the open-loop experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "cfu")]
    Cfu,
    #[serde(rename = "cu")]
    CUniform,
    #[serde(rename = "mppi")]
    Mppi,
    #[serde(rename = "logmppi")]
    LogMppi,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [Self::Cfu, Self::CUniform, Self::Mppi, Self::LogMppi];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cfu => "cfu",
            Self::CUniform => "cu",
            Self::Mppi => "mppi",
            Self::LogMppi => "logmppi",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sampler '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerceptionMode {
    #[default]
    SimulatedLidar,
    OracleLocalMap,
}

impl FromStr for PerceptionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulated-lidar" | "lidar" => Ok(Self::SimulatedLidar),
            "oracle-local-map" | "oracle" => Ok(Self::OracleLocalMap),
            _ => Err(format!("unknown perception mode '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub beams: usize,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            beams: 360,
            max_range: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSource {
    Generated {
        seed: u64,
        count: usize,
        #[serde(default)]
        spec: GenerationSpec,
    },
    Files {
        paths: Vec<PathBuf>,
    },
}

impl Default for EnvSource {
    fn default() -> Self {
        Self::Generated {
            seed: 0,
            count: 50,
            spec: GenerationSpec::default(),
        }
    }
}

/// One operating point of the scaling experiment. The horizon is
/// `round(duration / dt)` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCase {
    pub name: String,
    pub speed: f64,
    pub dt: f64,
    pub duration: f64,
}

impl ScalingCase {
    pub fn new(name: &str, speed: f64, dt: f64, duration: f64) -> Self {
        Self {
            name: name.to_string(),
            speed,
            dt,
            duration,
        }
    }

    pub fn horizon(&self) -> usize {
        (self.duration / self.dt).round().max(1.0) as usize
    }

    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("scale-v", 1.25, 0.2, 1.2),
            Self::new("scale-dt", 2.5, 0.1, 1.2),
            Self::new("two-params", 1.25, 0.1, 1.2),
            Self::new("three-params", 1.25, 0.1, 2.4),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigationSpec {
    /// Seconds between control updates.
    pub control_period: f64,
    /// Step cap as a multiple of the A* length over `expected_speed`.
    pub step_cap_factor: f64,
    pub expected_speed: f64,
    /// Resolution of the inflated grid used by A* (m).
    pub grid_resolution: f64,
    /// Free poses sampled per environment when searching for the task pair.
    pub candidate_poses: usize,
    /// Minimum clearance of task start and goal positions (m).
    pub endpoint_clearance: f64,
    /// Distance along the A* path to the point the start heading aims at (m).
    pub heading_lookahead: f64,
    /// Initial speed; the discretization speed when unset.
    pub start_speed: Option<f64>,
}

impl Default for NavigationSpec {
    fn default() -> Self {
        Self {
            control_period: 0.1,
            step_cap_factor: 4.0,
            expected_speed: 2.5,
            grid_resolution: 0.1,
            candidate_poses: 64,
            endpoint_clearance: 1.0,
            heading_lookahead: 1.0,
            start_speed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Label mixed into every derived seed.
    pub name: String,
    pub master_seed: u64,
    pub environments: EnvSource,
    /// Local maps per environment for the open-loop experiments.
    pub poses_per_env: usize,
    pub samplers: Vec<SamplerKind>,
    pub controllers: Vec<ControllerKind>,
    /// Budgets for single-frame planning and navigation.
    pub budgets: Vec<usize>,
    /// Rollouts per sampler and map in the uniformity and scaling experiments.
    pub uniformity_budget: usize,
    pub dynamics: DynamicsParams,
    pub discretization: DiscretizationSpec,
    pub cost: CostParams,
    pub lambda: f64,
    pub n_opt: usize,
    pub perception: PerceptionMode,
    pub local_map: LocalMapSpec,
    pub lidar: LidarSpec,
    pub trials_per_map: usize,
    pub trials_per_task: usize,
    pub scaling: Vec<ScalingCase>,
    pub navigation: NavigationSpec,
    pub epsilon: f64,
    pub bootstrap_resamples: usize,
    pub output_dir: Option<PathBuf>,
    /// Write an SVG per navigation episode.
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "bench".into(),
            master_seed: 0,
            environments: EnvSource::default(),
            poses_per_env: 5,
            samplers: SamplerKind::ALL.to_vec(),
            controllers: vec![ControllerKind::CfuMppi, ControllerKind::Mppi],
            budgets: vec![512],
            uniformity_budget: 5000,
            dynamics: DynamicsParams::default(),
            discretization: DiscretizationSpec::default(),
            cost: CostParams::default(),
            lambda: 0.5,
            n_opt: 1,
            perception: PerceptionMode::SimulatedLidar,
            local_map: LocalMapSpec::default(),
            lidar: LidarSpec::default(),
            trials_per_map: 10,
            trials_per_task: 3,
            scaling: ScalingCase::defaults(),
            navigation: NavigationSpec::default(),
            epsilon: crate::metrics::DEFAULT_EPSILON,
            bootstrap_resamples: 2000,
            output_dir: None,
            svg: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.budgets.is_empty() || self.budgets.contains(&0) || self.uniformity_budget == 0 {
            return bad("budgets must be positive");
        }
        if self.poses_per_env == 0 || self.trials_per_map == 0 || self.trials_per_task == 0 {
            return bad("pose and trial counts must be positive");
        }
        if self.n_opt == 0 || !(self.lambda > 0.0) {
            return bad("n_opt and lambda must be positive");
        }
        if let EnvSource::Files { paths } = &self.environments {
            if let Some(p) = paths.iter().find(|p| !p.exists()) {
                return Err(BenchError::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.scaling.iter().any(|c| !(c.speed > 0.0 && c.dt > 0.0 && c.duration > 0.0)) {
            return bad("scaling cases need positive speed, dt and duration");
        }
        self.dynamics.validate().map_err(BenchError::Config)?;
        self.discretization
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn seed(&self, parts: &[&str]) -> u64 {
        let mut all = vec![self.name.as_str()];
        all.extend_from_slice(parts);
        derive_seed(self.master_seed, &all)
    }

    /// Environments with their ids. Generation failures are logged and skipped.
    pub fn load_environments(&self) -> Result<Vec<(String, PolygonEnvironment)>, BenchError> {
        match &self.environments {
            EnvSource::Generated { seed, count, spec } => Ok((0..*count)
                .filter_map(|i| {
                    let id = format!("env{i}");
                    match generate_cluttered_environment(derive_seed(*seed, &["env", &i.to_string()]), spec) {
                        Ok(env) => Some((id, env)),
                        Err(e) => {
                            log::warn!("{id}: {e}");
                            None
                        }
                    }
                })
                .collect()),
            EnvSource::Files { paths } => paths
                .iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string());
                    Ok((id, PolygonEnvironment::load(p)?))
                })
                .collect(),
        }
    }

    /// Closed-loop controller settings at `budget`; the planner steps at the
    /// discretization `dt`.
    pub fn controller_params(&self, budget: usize) -> ControllerParams {
        ControllerParams {
            budget,
            n_opt: self.n_opt,
            lambda: self.lambda,
            horizon: self.discretization.horizon,
            dynamics: self.dynamics.with_dt(self.discretization.dt),
            cost: self.cost,
            noise: None,
            discretization: self.discretization.clone(),
        }
    }

    /// Robot-frame maps seen from `pose` under the configured perception mode.
    pub fn perceive(&self, env: &PolygonEnvironment, pose: Pose) -> Result<LocalPerception, EnvError> {
        let geometry = self.local_map.geometry();
        match self.perception {
            PerceptionMode::SimulatedLidar => {
                let scan = simulate_lidar(env, pose, self.lidar.beams, self.lidar.max_range)?;
                Ok(scan_to_local_maps(&scan, &geometry))
            }
            PerceptionMode::OracleLocalMap => Ok(oracle_local_maps(env, pose, &geometry)),
        }
    }

    fn output_file(&self, file: &str) -> Option<PathBuf> {
        self.output_dir.as_ref().map(|d| d.join(file))
    }
}

/// A local map together with its CFU policy bundle.
#[derive(Debug, Clone)]
pub struct LocalMapCase {
    pub id: String,
    pub perception: LocalPerception,
    pub bundle: PolicyBundle,
}

/// The local-perception dataset: `poses_per_env` free poses per environment,
/// each turned into a local map with a CFU policy. Maps without a safe
/// horizon are logged and skipped.
pub fn local_map_dataset(cfg: &ExperimentConfig) -> Result<Vec<LocalMapCase>, BenchError> {
    let mut out = Vec::new();
    for (env_id, env) in cfg.load_environments()? {
        let poses = match sample_free_poses(
            &env,
            cfg.poses_per_env,
            cfg.cost.footprint_radius,
            cfg.seed(&["poses", &env_id]),
        ) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{env_id}: {e}");
                continue;
            }
        };
        for (i, pose) in poses.into_iter().enumerate() {
            let id = format!("{env_id}/p{i}");
            let perception = match cfg.perceive(&env, pose) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("{id}: {e}");
                    continue;
                }
            };
            match compute_cfu_policy(&perception, &Pose::default(), &cfg.discretization, cfg.cost.footprint_radius) {
                Ok(bundle) => out.push(LocalMapCase { id, perception, bundle }),
                Err(e) => log::warn!("{id}: skipped, {e}"),
            }
        }
    }
    Ok(out)
}

/// Operating point used to roll samplers out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSetup {
    pub speed: f64,
    pub dt: f64,
    pub horizon: usize,
}

impl RolloutSetup {
    pub fn nominal(spec: &DiscretizationSpec) -> Self {
        Self {
            speed: spec.speed,
            dt: spec.dt,
            horizon: spec.horizon,
        }
    }
}

/// `budget` robot-frame trajectories from the origin at `setup.speed`.
/// Policy samplers use the training-time policies; perturbation samplers
/// perturb a zero nominal under the full dynamics.
pub fn sample_open_loop(
    kind: SamplerKind,
    case: &LocalMapCase,
    cuniform: &FlowPolicy,
    cfg: &ExperimentConfig,
    setup: RolloutSetup,
    budget: usize,
    seed: u64,
) -> Vec<Trajectory> {
    let x0 = State::new(0.0, 0.0, 0.0, setup.speed);
    let policy_rollout = |policy: &FlowPolicy, map: Option<&(dyn ClearanceMap + Sync)>| {
        let r = PolicyRollout {
            policy,
            fallback_map: map,
            footprint_radius: cfg.cost.footprint_radius,
            speed: setup.speed,
            horizon: setup.horizon,
            dynamics: cfg.discretization.dynamics().with_dt(setup.dt),
        };
        sample_policy_trajectories(&r, &x0, budget, seed)
    };
    let perturbed = |noise: PerturbationSpec| {
        let nominal = vec![Control::default(); setup.horizon];
        sample_perturbed_trajectories(&nominal, &x0, &noise, budget, seed, &cfg.dynamics.with_dt(setup.dt))
    };
    match kind {
        SamplerKind::Cfu => policy_rollout(&case.bundle.policy, Some(&case.perception)),
        SamplerKind::CUniform => policy_rollout(cuniform, None),
        SamplerKind::Mppi => perturbed(PerturbationSpec::gaussian()),
        SamplerKind::LogMppi => perturbed(PerturbationSpec::normal_lognormal()),
    }
}

/// Result of one acceptance-style check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Mean of paired differences and its percentile bootstrap 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

pub fn paired_bootstrap(diffs: &[f64], resamples: usize, seed: u64) -> PairedInterval {
    let n = diffs.len();
    if n == 0 {
        return PairedInterval {
            mean: f64::NAN,
            lo: f64::NAN,
            hi: f64::NAN,
            n,
        };
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = stream_rng(seed, 0);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    PairedInterval {
        mean,
        lo: at(0.025),
        hi: at(0.975),
        n,
    }
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
