use super::{
    local_map_dataset, sample_open_loop, write_csv_rows, write_json, BenchError, CheckResult, ExperimentConfig,
    LocalMapCase, RolloutSetup, SamplerKind,
};
use crate::dynamics::Trajectory;
use crate::flowpolicy::{cached_cuniform_policy, FlowPolicy};
use crate::geom::Point;
use crate::levelsets::cell_center;
use crate::samplers::first_collision;
use crate::seeds::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleFrameRow {
    pub map: String,
    pub trial: usize,
    pub sampler: SamplerKind,
    pub budget: usize,
    pub seed: u64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleFrameSummary {
    pub sampler: SamplerKind,
    pub budget: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SingleFrameTable {
    pub rows: Vec<SingleFrameRow>,
    pub summary: Vec<SingleFrameSummary>,
}

/// Uniform point inside a uniformly chosen cell of the last safe level set.
fn sample_goal(case: &LocalMapCase, cfg: &ExperimentConfig, trial: usize) -> Point {
    let ls = &case.bundle.level_sets;
    let last = &ls.levels[ls.horizon()];
    let mut rng = stream_rng(cfg.seed(&["single-frame-goal", &case.id]), trial as u64);
    let cell = last[rng.random_range(0..last.len())];
    let c = cell_center(&cell, &cfg.discretization).position();
    let h = cfg.discretization.cell_xy / 2.0;
    Point::new(c.x + rng.random_range(-h..h), c.y + rng.random_range(-h..h))
}

/// Index of the first state within tolerance of the goal, if the trajectory
/// gets there before colliding.
fn arrival(tr: &Trajectory, goal: Point, tol: f64, collision: Option<usize>) -> Option<usize> {
    let k = tr.states.iter().position(|s| s.position().dist(goal) <= tol)?;
    match collision {
        Some(c) if c <= k => None,
        _ => Some(k),
    }
}

fn trial_successes(
    kind: SamplerKind,
    case: &LocalMapCase,
    cu: &FlowPolicy,
    cfg: &ExperimentConfig,
    goal: Point,
    seed: u64,
) -> Vec<bool> {
    let max_budget = cfg.budgets.iter().copied().max().unwrap_or(0);
    let setup = RolloutSetup::nominal(&cfg.discretization);
    let trajs = sample_open_loop(kind, case, cu, cfg, setup, max_budget, seed);
    // success at budget b is "some sample among the first b arrives", which
    // is monotone in b because batches share prefixes
    let mut first_hit = usize::MAX;
    for (i, tr) in trajs.iter().enumerate() {
        let col = first_collision(tr, &case.perception, cfg.cost.footprint_radius);
        if arrival(tr, goal, cfg.cost.goal_tolerance, col).is_some() {
            first_hit = i;
            break;
        }
    }
    cfg.budgets.iter().map(|&b| first_hit < b).collect()
}

/// For every map and trial, a goal in the last safe level set; a sampler
/// succeeds when one of its samples reaches the goal before any collision.
pub fn run_single_frame(cfg: &ExperimentConfig) -> Result<SingleFrameTable, BenchError> {
    cfg.validate()?;
    let cases = local_map_dataset(cfg)?;
    let cu = cached_cuniform_policy(&cfg.discretization)?;
    let mut table = SingleFrameTable::default();
    for case in &cases {
        for trial in 0..cfg.trials_per_map {
            let goal = sample_goal(case, cfg, trial);
            let seed = cfg.seed(&["single-frame", &case.id, &trial.to_string()]);
            for &kind in &cfg.samplers {
                let ok = trial_successes(kind, case, &cu, cfg, goal, seed);
                for (&budget, success) in cfg.budgets.iter().zip(ok) {
                    table.rows.push(SingleFrameRow {
                        map: case.id.clone(),
                        trial,
                        sampler: kind,
                        budget,
                        seed,
                        goal_x: goal.x,
                        goal_y: goal.y,
                        success,
                    });
                }
            }
        }
        log::info!("single-frame {}: done", case.id);
    }
    for &s in &cfg.samplers {
        for &b in &cfg.budgets {
            let mine: Vec<&SingleFrameRow> = table.rows.iter().filter(|r| r.sampler == s && r.budget == b).collect();
            let successes = mine.iter().filter(|r| r.success).count();
            table.summary.push(SingleFrameSummary {
                sampler: s,
                budget: b,
                trials: mine.len(),
                successes,
                success_rate: if mine.is_empty() { f64::NAN } else { successes as f64 / mine.len() as f64 },
            });
        }
    }
    if let Some(path) = cfg.output_file("single_frame.csv") {
        write_csv_rows(&path, &table.rows)?;
        write_json(&path.with_file_name("single_frame_summary.json"), &table.summary)?;
    }
    Ok(table)
}

/// Success ordering `cfu > cu > logmppi > mppi` at `budget`, and per sampler
/// success that never drops when the budget grows.
pub fn check_single_frame(table: &SingleFrameTable, budget: usize) -> Vec<CheckResult> {
    use SamplerKind::*;
    let rate = |s: SamplerKind| {
        table
            .summary
            .iter()
            .find(|r| r.sampler == s && r.budget == budget)
            .map(|r| r.success_rate)
    };
    let mut out = Vec::new();
    for (a, b) in [(Cfu, CUniform), (CUniform, LogMppi), (LogMppi, Mppi)] {
        if let (Some(x), Some(y)) = (rate(a), rate(b)) {
            out.push(CheckResult::new(
                format!("success {a} > {b} at {budget}"),
                x > y,
                format!("{:.1}% vs {:.1}%", 100.0 * x, 100.0 * y),
            ));
        }
    }
    let mut samplers: Vec<SamplerKind> = table.summary.iter().map(|r| r.sampler).collect();
    samplers.dedup();
    for s in samplers {
        let mut rows: Vec<&SingleFrameRow> = table.rows.iter().filter(|r| r.sampler == s).collect();
        rows.sort_by(|a, b| (&a.map, a.trial, a.budget).cmp(&(&b.map, b.trial, b.budget)));
        let violations = rows
            .windows(2)
            .filter(|w| w[0].map == w[1].map && w[0].trial == w[1].trial && w[0].success && !w[1].success)
            .count();
        out.push(CheckResult::new(
            format!("{s} success monotone in budget"),
            violations == 0,
            format!("{violations} violations"),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::State;

    #[test]
    fn arrival_respects_collision_order() {
        let states = (0..4).map(|i| State::new(i as f64, 0.0, 0.0, 1.0)).collect();
        let tr = Trajectory {
            states,
            controls: vec![],
        };
        let goal = Point::new(2.0, 0.0);
        assert_eq!(arrival(&tr, goal, 0.1, None), Some(2));
        assert_eq!(arrival(&tr, goal, 0.1, Some(3)), Some(2));
        assert_eq!(arrival(&tr, goal, 0.1, Some(2)), None);
        assert_eq!(arrival(&tr, Point::new(0.0, 0.0), 0.1, Some(1)), Some(0));
        assert_eq!(arrival(&tr, Point::new(9.0, 0.0), 0.1, None), None);
    }
}
