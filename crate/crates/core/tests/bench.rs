use cfu_core::bench::{
    a_star, compute_navigation_tasks, dijkstra, inflated_grid, path_cells_length, run_episode, run_navigation,
    run_scaling, run_uniformity, sample_open_loop, EnvSource, ExperimentConfig, LocalMapCase, NavigationTask, Outcome,
    PerceptionMode, RolloutSetup, SamplerKind, ScalingCase,
};
use cfu_core::controller::ControllerKind;
use cfu_core::env::{
    generate_cluttered_environment, Bounds, GenerationSpec, GridGeometry, OccupancyGrid, Polygon, PolygonEnvironment,
};
use cfu_core::flowpolicy::{cached_cuniform_policy, compute_cfu_policy};
use cfu_core::geom::{Point, Pose};
use cfu_core::metrics::uniformity_report;
use cfu_core::samplers::TrajectoryBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn generated(count: usize) -> EnvSource {
    EnvSource::Generated {
        seed: 0,
        count,
        spec: GenerationSpec::default(),
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon {
        vertices: vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)],
    }
}

#[test]
fn a_star_matches_dijkstra_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(2..30), rng.random_range(2..30));
        let geom = GridGeometry::new(Point::new(0.0, 0.0), 1.0, w, h);
        let density = rng.random_range(0.0..0.4);
        let values = (0..w * h).map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 }).collect();
        let mut grid = OccupancyGrid::new(geom, values);
        let start = (rng.random_range(0..w), rng.random_range(0..h));
        let goal = (rng.random_range(0..w), rng.random_range(0..h));
        for c in [start, goal] {
            let i = geom.index(c.0, c.1);
            grid.values[i] = 0.0;
        }
        let path = a_star(&grid, start, goal);
        let d = dijkstra(&grid, start)[geom.index(goal.0, goal.1)];
        if d.is_finite() {
            assert!((path_cells_length(&path) - d).abs() < 1e-9, "A* {} vs Dijkstra {d}", path_cells_length(&path));
            assert_eq!((path[0], *path.last().unwrap()), (start, goal));
        } else {
            assert!(path.is_empty());
        }
    }
}

#[test]
fn chosen_pair_beats_random_pairs() {
    let cfg = ExperimentConfig::default();
    let r = cfg.cost.footprint_radius;
    let nav = &cfg.navigation;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..3 {
        let env = generate_cluttered_environment(seed, &GenerationSpec::default()).unwrap();
        let [t0, t1] = compute_navigation_tasks(&env, "e", r, nav, seed).unwrap();
        assert_eq!((t0.start.position(), t0.goal), (t1.goal, t1.start.position()));
        let grid = inflated_grid(&env, nav.grid_resolution, r);
        let g = grid.geometry;
        // the same candidate set the task generator draws endpoints from
        let allowed: Vec<(usize, usize)> = g
            .centers()
            .filter(|(ix, iy, c)| !grid.is_occupied(*ix, *iy) && env.clearance(*c) >= nav.endpoint_clearance)
            .map(|(ix, iy, _)| (ix, iy))
            .collect();
        let mut checked = 0;
        let mut by_start = std::collections::HashMap::new();
        while checked < 1000 {
            let a = allowed[rng.random_range(0..allowed.len())];
            let b = allowed[rng.random_range(0..allowed.len())];
            let d = by_start.entry(a).or_insert_with(|| dijkstra(&grid, a));
            let len = d[g.index(b.0, b.1)];
            if !len.is_finite() {
                continue;
            }
            checked += 1;
            assert!(t0.astar_length + 1e-9 >= len * g.resolution, "pair {a:?}-{b:?} is longer");
        }
    }
}

#[test]
fn start_at_goal_is_immediate_success() {
    let env = PolygonEnvironment::empty(Bounds::new(Point::new(0.0, 0.0), Point::new(6.0, 6.0)));
    let p = Point::new(3.0, 3.0);
    let task = NavigationTask {
        id: "still".into(),
        env_id: "empty".into(),
        start: Pose::new(p.x, p.y, 0.0),
        goal: Point::new(3.1, 3.0),
        astar_length: 0.1,
        path: vec![p],
    };
    let cfg = ExperimentConfig::default();
    for kind in [ControllerKind::Mppi, ControllerKind::CfuMppi] {
        let ep = run_episode(&env, &task, kind, 64, 0, &cfg);
        assert_eq!(ep.result.outcome, Outcome::Success);
        assert_eq!(ep.result.steps, 0);
        assert!(ep.result.path_length.abs() < 1e-12);
    }
}

fn small_cfg(count: usize) -> ExperimentConfig {
    ExperimentConfig {
        environments: generated(count),
        poses_per_env: 3,
        uniformity_budget: 1000,
        ..ExperimentConfig::default()
    }
}

#[test]
fn identity_scaling_reproduces_uniformity() {
    let mut cfg = small_cfg(3);
    let d = &cfg.discretization;
    cfg.scaling = vec![ScalingCase {
        name: "identity".into(),
        speed: d.speed,
        dt: d.dt,
        duration: d.dt * d.horizon as f64,
    }];
    let u = run_uniformity(&cfg).unwrap();
    let s = run_scaling(&cfg).unwrap();
    assert!(!u.rows.is_empty());
    assert_eq!(u.rows.len(), s.rows.len());
    for (a, b) in u.rows.iter().zip(&s.rows) {
        assert_eq!((&a.map, a.sampler, a.seed), (&b.map, b.sampler, b.seed));
        assert_eq!(a.avg_kl, b.avg_kl);
        assert_eq!(a.collision_free_ratio, b.collision_free_ratio);
        assert!(!b.levels_changed);
    }
}

#[test]
fn scaled_level_sets_differ() {
    let cfg = small_cfg(2);
    let s = run_scaling(&cfg).unwrap();
    for case in &cfg.scaling {
        assert!(
            s.rows.iter().any(|r| r.case == case.name && r.levels_changed),
            "{} left every level set unchanged",
            case.name
        );
    }
}

#[test]
fn report_averages_are_level_means() {
    let cfg = small_cfg(2);
    let u = run_uniformity(&cfg).unwrap();
    assert_eq!(u.rows.len(), u.reports.len());
    for (row, (map, rep)) in u.rows.iter().zip(&u.reports) {
        assert_eq!(&row.map, map);
        let kls: Vec<f64> = rep.levels.iter().filter_map(|l| l.kl).collect();
        let ers: Vec<f64> = rep.levels.iter().filter_map(|l| l.entropy_ratio).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((row.avg_kl.unwrap() - mean(&kls)).abs() < 1e-12);
        assert!((row.avg_entropy_ratio.unwrap() - mean(&ers)).abs() < 1e-12);
    }
}

#[test]
fn cfu_matches_cuniform_away_from_obstacles() {
    let env = PolygonEnvironment::empty(Bounds::new(Point::new(0.0, 0.0), Point::new(20.0, 20.0)));
    let cfg = ExperimentConfig {
        perception: PerceptionMode::OracleLocalMap,
        ..ExperimentConfig::default()
    };
    let perception = cfg.perceive(&env, Pose::new(10.0, 10.0, 0.3)).unwrap();
    let bundle =
        compute_cfu_policy(&perception, &Pose::default(), &cfg.discretization, cfg.cost.footprint_radius).unwrap();
    let case = LocalMapCase {
        id: "open".into(),
        perception,
        bundle,
    };
    let cu = cached_cuniform_policy(&cfg.discretization).unwrap();
    let setup = RolloutSetup::nominal(&cfg.discretization);
    let report = |kind: SamplerKind| {
        let trajs = sample_open_loop(kind, &case, &cu, &cfg, setup, 5000, 4);
        let batch = TrajectoryBatch::annotate(trajs, &case.perception, cfg.cost.footprint_radius);
        uniformity_report(&batch, &case.bundle.level_sets, &cfg.discretization, kind.name(), 5000, 4, cfg.epsilon)
    };
    let (a, b) = (report(SamplerKind::Cfu), report(SamplerKind::CUniform));
    assert_eq!(a.collision_free_ratio, 1.0);
    assert_eq!(b.collision_free_ratio, 1.0);
    assert!((a.avg_kl.unwrap() - b.avg_kl.unwrap()).abs() < 0.05, "{:?} vs {:?}", a.avg_kl, b.avg_kl);
}

/// S-shaped corridor of three 2.4 m lanes inside a 12 x 8.4 m box.
fn corridor_world() -> PolygonEnvironment {
    PolygonEnvironment::new(
        Bounds::new(Point::new(0.0, 0.0), Point::new(12.0, 8.4)),
        vec![rect(0.0, 2.4, 8.0, 3.0), rect(4.0, 5.4, 12.0, 6.0)],
    )
}

#[test]
fn corridor_cfu_mppi_not_worse_than_mppi() {
    let env = corridor_world();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corridor.json");
    env.save(&path).unwrap();
    let cfg = ExperimentConfig {
        environments: EnvSource::Files { paths: vec![path] },
        controllers: vec![ControllerKind::CfuMppi, ControllerKind::Mppi],
        budgets: vec![512],
        trials_per_task: 10,
        ..ExperimentConfig::default()
    };
    let t = run_navigation(&cfg).unwrap();
    let rate = |k: ControllerKind| t.summary.iter().find(|s| s.controller == k).unwrap();
    let (cfu, mppi) = (rate(ControllerKind::CfuMppi), rate(ControllerKind::Mppi));
    assert_eq!(cfu.trials, 20);
    assert!(cfu.success_rate >= mppi.success_rate, "{} vs {}", cfu.success_rate, mppi.success_rate);
}

#[test]
fn oracle_perception_not_worse_than_lidar() {
    let base = ExperimentConfig {
        environments: generated(10),
        controllers: vec![ControllerKind::Mppi],
        budgets: vec![512],
        trials_per_task: 3,
        ..ExperimentConfig::default()
    };
    let lidar = run_navigation(&base).unwrap();
    let oracle = run_navigation(&ExperimentConfig {
        perception: PerceptionMode::OracleLocalMap,
        ..base
    })
    .unwrap();
    assert_eq!(lidar.tasks, oracle.tasks);
    let (l, o) = (&lidar.summary[0], &oracle.summary[0]);
    assert_eq!(l.trials, o.trials);
    assert!(o.success_rate >= l.success_rate, "oracle {} vs lidar {}", o.success_rate, l.success_rate);
}

#[test]
fn successful_paths_are_at_least_straight_line() {
    let cfg = ExperimentConfig {
        environments: generated(4),
        controllers: vec![ControllerKind::Mppi],
        budgets: vec![256],
        trials_per_task: 2,
        ..ExperimentConfig::default()
    };
    let t = run_navigation(&cfg).unwrap();
    for r in t.results.iter().filter(|r| r.outcome == Outcome::Success) {
        // arrival only needs the goal tolerance
        assert!(r.path_length + cfg.cost.goal_tolerance >= r.straight_line);
    }
    for s in &t.summary {
        assert_eq!(s.successes + s.collisions + s.timeouts, s.trials);
    }
}
