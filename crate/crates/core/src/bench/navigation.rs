use super::svg::world_canvas;
use super::{
    compute_navigation_tasks, write_csv_rows, write_json, BenchError, CheckResult, ExperimentConfig, NavigationTask,
    PerceptionMode,
};
use crate::controller::{Controller, ControllerKind};
use crate::dynamics::{step, State};
use crate::env::{footprint_in_collision, PolygonEnvironment};
use crate::geom::Point;
use crate::seeds::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

/// One closed-loop episode. Wall time is kept out of serialized rows so that
/// result files are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task: String,
    pub controller: ControllerKind,
    pub budget: usize,
    pub perception: PerceptionMode,
    pub trial: usize,
    pub seed: u64,
    pub outcome: Outcome,
    /// Distance driven (m).
    pub path_length: f64,
    pub straight_line: f64,
    pub steps: usize,
    pub reason: Option<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub type NavigationRow = TrialResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationSummary {
    pub controller: ControllerKind,
    pub budget: usize,
    pub perception: PerceptionMode,
    pub trials: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    /// Mean path length over successful episodes.
    pub avg_path_length: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NavigationTable {
    pub tasks: Vec<NavigationTask>,
    pub results: Vec<TrialResult>,
    pub summary: Vec<NavigationSummary>,
}

/// Driven path of an episode with its result.
#[derive(Debug, Clone)]
pub struct Episode {
    pub result: TrialResult,
    pub path: Vec<State>,
}

/// Runs one episode: sense, plan in the robot frame, apply the first control
/// for one control period, until the goal, a collision or the step cap.
pub fn run_episode(
    env: &PolygonEnvironment,
    task: &NavigationTask,
    kind: ControllerKind,
    budget: usize,
    trial: usize,
    cfg: &ExperimentConfig,
) -> Episode {
    let started = Instant::now();
    let seed = cfg.seed(&["navigation", &task.id, &trial.to_string(), kind.name()]);
    let nav = &cfg.navigation;
    let plant = cfg.dynamics.with_dt(nav.control_period);
    let tol = cfg.cost.goal_tolerance;
    let r = cfg.cost.footprint_radius;
    let cap = (nav.step_cap_factor * task.astar_length / nav.expected_speed / nav.control_period)
        .ceil()
        .max(1.0) as usize;
    let mut ctrl = Controller::new(kind, cfg.controller_params(budget));
    let mut x = State::from_pose(task.start, nav.start_speed.unwrap_or(cfg.discretization.speed));
    let mut path = vec![x];
    let mut length = 0.0;
    let mut reason = None;
    let mut steps = 0;
    let outcome = loop {
        if x.position().dist(task.goal) <= tol {
            break Outcome::Success;
        }
        if steps >= cap {
            break Outcome::Timeout;
        }
        let map = match cfg.perceive(env, x.pose()) {
            Ok(m) => m,
            Err(e) => {
                reason = Some(e.to_string());
                break Outcome::Collision;
            }
        };
        let goal = x.pose().to_local(task.goal);
        let local = State::new(0.0, 0.0, 0.0, x.v);
        let out = ctrl.control_step(&local, goal, &map, derive_seed(seed, &["step", &steps.to_string()]));
        let next = step(&x, &out.control, &plant);
        let (a, b) = (x.position(), next.position());
        length += b.dist(a);
        x = next;
        path.push(x);
        steps += 1;
        let mid = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
        if footprint_in_collision(env, mid, r) || footprint_in_collision(env, b, r) {
            break Outcome::Collision;
        }
    };
    Episode {
        result: TrialResult {
            task: task.id.clone(),
            controller: kind,
            budget,
            perception: cfg.perception,
            trial,
            seed,
            outcome,
            path_length: length,
            straight_line: task.start.position().dist(task.goal),
            steps,
            reason,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        path,
    }
}

pub fn summarize_navigation(results: &[TrialResult]) -> Vec<NavigationSummary> {
    let mut keys: Vec<(ControllerKind, usize, PerceptionMode)> =
        results.iter().map(|r| (r.controller, r.budget, r.perception)).collect();
    keys.sort_by_key(|k| (k.0, k.1, k.2 == PerceptionMode::OracleLocalMap));
    keys.dedup();
    keys.into_iter()
        .map(|(controller, budget, perception)| {
            let mine: Vec<&TrialResult> = results
                .iter()
                .filter(|r| r.controller == controller && r.budget == budget && r.perception == perception)
                .collect();
            let count = |o: Outcome| mine.iter().filter(|r| r.outcome == o).count();
            let successes = count(Outcome::Success);
            let lengths: Vec<f64> = mine
                .iter()
                .filter(|r| r.outcome == Outcome::Success)
                .map(|r| r.path_length)
                .collect();
            NavigationSummary {
                controller,
                budget,
                perception,
                trials: mine.len(),
                successes,
                collisions: count(Outcome::Collision),
                timeouts: count(Outcome::Timeout),
                success_rate: successes as f64 / mine.len() as f64,
                avg_path_length: (!lengths.is_empty()).then(|| lengths.iter().sum::<f64>() / lengths.len() as f64),
            }
        })
        .collect()
}

fn render(env: &PolygonEnvironment, task: &NavigationTask, path: &[State]) -> String {
    let mut c = world_canvas(env);
    c.polyline(&task.path, "#9ab", 1.5, 0.8);
    let driven: Vec<Point> = path.iter().map(|s| s.position()).collect();
    c.polyline(&driven, "#d33", 2.0, 1.0);
    c.circle(task.start.position(), 0.15, "#2a2");
    c.circle(task.goal, 0.15, "#22c");
    c.finish()
}

/// Two link-diameter tasks per environment, `trials_per_task` episodes per
/// task, controller and budget.
pub fn run_navigation(cfg: &ExperimentConfig) -> Result<NavigationTable, BenchError> {
    cfg.validate()?;
    let mut table = NavigationTable::default();
    let mut jobs = Vec::new();
    let envs = cfg.load_environments()?;
    for (i, (env_id, env)) in envs.iter().enumerate() {
        match compute_navigation_tasks(
            env,
            env_id,
            cfg.cost.footprint_radius,
            &cfg.navigation,
            cfg.seed(&["tasks", env_id]),
        ) {
            Ok(tasks) => {
                for t in tasks {
                    for &kind in &cfg.controllers {
                        for &budget in &cfg.budgets {
                            for trial in 0..cfg.trials_per_task {
                                jobs.push((i, table.tasks.len(), kind, budget, trial));
                            }
                        }
                    }
                    table.tasks.push(t);
                }
            }
            Err(e) => log::warn!("{env_id}: no tasks, {e}"),
        }
    }
    let episodes: Vec<Episode> = jobs
        .par_iter()
        .map(|&(e, t, kind, budget, trial)| {
            let ep = run_episode(&envs[e].1, &table.tasks[t], kind, budget, trial, cfg);
            log::info!(
                "{} {} b{} #{}: {:?} after {} steps",
                table.tasks[t].id,
                kind.name(),
                budget,
                trial,
                ep.result.outcome,
                ep.result.steps
            );
            ep
        })
        .collect();
    if let (true, Some(dir)) = (cfg.svg, &cfg.output_dir) {
        let dir = dir.join("episodes");
        std::fs::create_dir_all(&dir)?;
        for (ep, &(e, t, ..)) in episodes.iter().zip(&jobs) {
            let r = &ep.result;
            let name = format!(
                "{}_{}_b{}_{}.svg",
                r.task.replace('/', "_"),
                r.controller.name(),
                r.budget,
                r.trial
            );
            std::fs::write(dir.join(name), render(&envs[e].1, &table.tasks[t], &ep.path))?;
        }
    }
    table.results = episodes.into_iter().map(|e| e.result).collect();
    table.summary = summarize_navigation(&table.results);
    if let Some(path) = cfg.output_file("navigation.csv") {
        write_csv_rows(&path, &table.results)?;
        write_json(&path.with_file_name("navigation_tasks.json"), &table.tasks)?;
        write_json(&path.with_file_name("navigation_summary.json"), &table.summary)?;
    }
    Ok(table)
}

/// CFU-MPPI success at least `margin` above MPPI at `budget`, and outcome
/// counts that add up in every summary row.
pub fn check_navigation(table: &NavigationTable, budget: usize, margin: f64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let rate = |k: ControllerKind| {
        table
            .summary
            .iter()
            .find(|s| s.controller == k && s.budget == budget)
            .map(|s| s.success_rate)
    };
    if let (Some(cfu), Some(mppi)) = (rate(ControllerKind::CfuMppi), rate(ControllerKind::Mppi)) {
        out.push(CheckResult::new(
            format!("success cfu-mppi - mppi >= {:.0} points at {budget}", 100.0 * margin),
            cfu - mppi >= margin - 1e-12,
            format!("{:.1}% vs {:.1}%", 100.0 * cfu, 100.0 * mppi),
        ));
    }
    let consistent = table
        .summary
        .iter()
        .all(|s| s.successes + s.collisions + s.timeouts == s.trials);
    out.push(CheckResult::new("outcome counts add up", consistent, String::new()));
    out
}
