use anyhow::{bail, Context, Result};
use cfu_core::bench::{self, svg, CheckResult, ExperimentConfig, LocalMapCase, NavigationTask, SamplerKind};
use cfu_core::controller::{Controller, ControllerKind};
use cfu_core::dynamics::{State, Trajectory};
use cfu_core::env::{generate_cluttered_environment, GenerationSpec, PolygonEnvironment};
use cfu_core::flowpolicy::{cached_cuniform_policy, compute_cfu_policy};
use cfu_core::geom::{Point, Pose};
use cfu_core::metrics::uniformity_report;
use cfu_core::samplers::TrajectoryBatch;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "cfu", about = "Map-conditioned uniform trajectory sampling and CFU-MPPI navigation")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a cluttered polygon environment.
    GenEnv {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generation parameters (JSON); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// CFU policy for the local map seen from a pose.
    Policy {
        /// Environment file.
        #[arg(long)]
        map: PathBuf,
        /// World pose `x,y,theta`.
        #[arg(long, value_parser = parse_pose)]
        pose: Pose,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_levelsets: Option<PathBuf>,
    },
    /// Open-loop trajectories of one sampler from a pose.
    Sample {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_parser = parse_pose)]
        pose: Pose,
        #[arg(long, default_value = "cfu")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 512)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// One control step towards a world goal.
    Plan {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_parser = parse_pose)]
        pose: Pose,
        #[arg(long, value_parser = parse_point)]
        goal: Point,
        #[arg(long, default_value = "cfu-mppi")]
        controller: ControllerKind,
        #[arg(long, default_value_t = 512)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Closed-loop episode. Without `--start`/`--goal` the link-diameter task
    /// `--task` of the environment is used.
    Navigate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_parser = parse_pose)]
        start: Option<Pose>,
        #[arg(long, value_parser = parse_point)]
        goal: Option<Point>,
        #[arg(long, default_value_t = 0)]
        task: usize,
        #[arg(long, default_value = "cfu-mppi")]
        controller: ControllerKind,
        #[arg(long, default_value_t = 512)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run an experiment from the configuration.
    Bench {
        #[arg(value_enum)]
        which: Experiment,
        /// Evaluate the experiment's checks; exit nonzero if any fails.
        #[arg(long)]
        check: bool,
        /// Overrides the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Uniformity metrics of one sampler on the local map seen from a pose.
    Metrics {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_parser = parse_pose)]
        pose: Pose,
        #[arg(long, default_value = "cfu")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 5000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Experiment {
    Uniformity,
    SingleFrame,
    Scaling,
    Navigation,
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers"));
    }
    Ok(v)
}

fn parse_pose(s: &str) -> Result<Pose, String> {
    let v = parse_floats(s, 3)?;
    Ok(Pose::new(v[0], v[1], v[2]))
}

fn parse_point(s: &str) -> Result<Point, String> {
    let v = parse_floats(s, 2)?;
    Ok(Point::new(v[0], v[1]))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn local_case(cfg: &ExperimentConfig, env: &PolygonEnvironment, pose: Pose) -> Result<LocalMapCase> {
    let perception = cfg.perceive(env, pose)?;
    let bundle = compute_cfu_policy(&perception, &Pose::default(), &cfg.discretization, cfg.cost.footprint_radius)?;
    Ok(LocalMapCase {
        id: "cli".into(),
        perception,
        bundle,
    })
}

fn local_svg(case: &LocalMapCase, trajs: &[Trajectory], highlight: Option<&Trajectory>, goal: Option<Point>) -> String {
    let mut c = svg::local_canvas(&case.perception);
    svg::trajectories(&mut c, trajs, "#36c", 0.15);
    if let Some(t) = highlight {
        svg::trajectories(&mut c, std::slice::from_ref(t), "#e80", 1.0);
    }
    if let Some(g) = goal {
        c.circle(g, 0.12, "#2a2");
    }
    c.circle(Point::new(0.0, 0.0), 0.1, "#c22");
    c.finish()
}

fn report(checks: &[CheckResult]) -> bool {
    for c in checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.passed)
}

fn bench(cfg: &mut ExperimentConfig, which: Experiment, check: bool) -> Result<bool> {
    let seed = cfg.seed(&["bootstrap"]);
    let budget = cfg.budgets.iter().copied().find(|&b| b == 512).or(cfg.budgets.first().copied());
    let checks = match which {
        Experiment::Uniformity => {
            let t = bench::run_uniformity(cfg)?;
            println!("{}", serde_json::to_string_pretty(&t.summary)?);
            bench::check_uniformity(&t, cfg.bootstrap_resamples, seed)
        }
        Experiment::SingleFrame => {
            let t = bench::run_single_frame(cfg)?;
            println!("{}", serde_json::to_string_pretty(&t.summary)?);
            budget.map(|b| bench::check_single_frame(&t, b)).unwrap_or_default()
        }
        Experiment::Scaling => {
            let t = bench::run_scaling(cfg)?;
            println!("{}", serde_json::to_string_pretty(&t.summary)?);
            bench::check_scaling(&t, &cfg.scaling)
        }
        Experiment::Navigation => {
            let t = bench::run_navigation(cfg)?;
            println!("{}", serde_json::to_string_pretty(&t.summary)?);
            budget.map(|b| bench::check_navigation(&t, b, 0.10)).unwrap_or_default()
        }
    };
    Ok(!check || report(&checks))
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.cmd {
        Cmd::GenEnv { seed, spec, out, svg } => {
            let spec: GenerationSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => GenerationSpec::default(),
            };
            let env = generate_cluttered_environment(seed, &spec)?;
            env.save(&out)?;
            if let Some(p) = svg {
                std::fs::write(p, svg::world_canvas(&env).finish())?;
            }
            log::info!("{} obstacles", env.obstacles.len());
        }
        Cmd::Policy {
            map,
            pose,
            out,
            dump_levelsets,
        } => {
            let env = PolygonEnvironment::load(&map)?;
            let case = local_case(&cfg, &env, pose)?;
            write_json(&out, &case.bundle.policy.to_file())?;
            if let Some(p) = dump_levelsets {
                write_json(&p, &case.bundle.level_sets)?;
            }
            println!(
                "{} policy cells, level sizes {:?}",
                case.bundle.policy.len(),
                case.bundle.level_sets.levels.iter().map(Vec::len).collect::<Vec<_>>()
            );
        }
        Cmd::Sample {
            map,
            pose,
            sampler,
            budget,
            seed,
            out,
            svg,
        } => {
            let env = PolygonEnvironment::load(&map)?;
            let case = local_case(&cfg, &env, pose)?;
            let cu = cached_cuniform_policy(&cfg.discretization)?;
            let setup = bench::RolloutSetup::nominal(&cfg.discretization);
            let trajs = bench::sample_open_loop(sampler, &case, &cu, &cfg, setup, budget, seed);
            write_json(&out, &trajs)?;
            if let Some(p) = svg {
                std::fs::write(p, local_svg(&case, &trajs, None, None))?;
            }
        }
        Cmd::Plan {
            map,
            pose,
            goal,
            controller,
            budget,
            seed,
            out,
            svg,
        } => {
            let env = PolygonEnvironment::load(&map)?;
            let perception = cfg.perceive(&env, pose)?;
            let mut ctrl = Controller::new(controller, cfg.controller_params(budget));
            ctrl.record_samples = svg.is_some();
            let local_goal = pose.to_local(goal);
            let x = State::new(0.0, 0.0, 0.0, cfg.discretization.speed);
            let step = ctrl.control_step(&x, local_goal, &perception, seed);
            write_json(
                &out,
                &serde_json::json!({
                    "control": step.control,
                    "nominal": step.nominal,
                    "planned": step.planned,
                    "diagnostics": step.diagnostics,
                }),
            )?;
            if let Some(p) = svg {
                let case = LocalMapCase {
                    id: "plan".into(),
                    bundle: compute_cfu_policy(
                        &perception,
                        &Pose::default(),
                        &cfg.discretization,
                        cfg.cost.footprint_radius,
                    )
                    .or_else(|_| cfu_core::flowpolicy::compute_cuniform_policy(&cfg.discretization))?,
                    perception,
                };
                std::fs::write(p, local_svg(&case, &step.samples, Some(&step.planned), Some(local_goal)))?;
            }
        }
        Cmd::Navigate {
            map,
            start,
            goal,
            task,
            controller,
            budget,
            trial,
            out,
            svg,
        } => {
            let env = PolygonEnvironment::load(&map)?;
            let id = map.file_stem().and_then(|s| s.to_str()).unwrap_or("env").to_string();
            let t = match (start, goal) {
                (Some(s), Some(g)) => custom_task(&env, &id, s, g, &cfg)?,
                (None, None) => {
                    let tasks = bench::compute_navigation_tasks(
                        &env,
                        &id,
                        cfg.cost.footprint_radius,
                        &cfg.navigation,
                        cfg.seed(&["tasks", &id]),
                    )?;
                    match tasks.into_iter().nth(task) {
                        Some(t) => t,
                        None => bail!("--task must be 0 or 1"),
                    }
                }
                _ => bail!("--start and --goal go together"),
            };
            let ep = bench::run_episode(&env, &t, controller, budget, trial, &cfg);
            println!("{:?} after {} steps, {:.2} m driven", ep.result.outcome, ep.result.steps, ep.result.path_length);
            write_json(&out, &serde_json::json!({ "task": t, "result": ep.result, "path": ep.path }))?;
            if let Some(p) = svg {
                let mut c = svg::world_canvas(&env);
                c.polyline(&t.path, "#9ab", 1.5, 0.8);
                let driven: Vec<Point> = ep.path.iter().map(|s| s.position()).collect();
                c.polyline(&driven, "#d33", 2.0, 1.0);
                c.circle(t.goal, 0.15, "#22c");
                std::fs::write(p, c.finish())?;
            }
        }
        Cmd::Bench { which, check, out_dir } => {
            if out_dir.is_some() {
                cfg.output_dir = out_dir;
            }
            return bench(&mut cfg, which, check);
        }
        Cmd::Metrics {
            map,
            pose,
            sampler,
            budget,
            seed,
            out,
        } => {
            let env = PolygonEnvironment::load(&map)?;
            let case = local_case(&cfg, &env, pose)?;
            let cu = cached_cuniform_policy(&cfg.discretization)?;
            let setup = bench::RolloutSetup::nominal(&cfg.discretization);
            let trajs = bench::sample_open_loop(sampler, &case, &cu, &cfg, setup, budget, seed);
            let batch = TrajectoryBatch::annotate(trajs, &case.perception, cfg.cost.footprint_radius);
            let r = uniformity_report(
                &batch,
                &case.bundle.level_sets,
                &cfg.discretization,
                sampler.name(),
                budget,
                seed,
                cfg.epsilon,
            );
            println!(
                "{}: avg KL {:?}, collision-free {:.3}, entropy ratio {:?}",
                sampler, r.avg_kl, r.collision_free_ratio, r.avg_entropy_ratio
            );
            if let Some(p) = out {
                write_json(&p, &r)?;
            }
        }
    }
    Ok(true)
}

/// Task between explicit endpoints; the step cap still comes from the A*
/// length on the inflated grid.
fn custom_task(env: &PolygonEnvironment, id: &str, start: Pose, goal: Point, cfg: &ExperimentConfig) -> Result<NavigationTask> {
    let grid = bench::inflated_grid(env, cfg.navigation.grid_resolution, cfg.cost.footprint_radius);
    let g = grid.geometry;
    let (Some(a), Some(b)) = (g.cell_of(start.position()), g.cell_of(goal)) else {
        bail!("start or goal outside the environment")
    };
    let cells = bench::a_star(&grid, a, b);
    if cells.is_empty() {
        bail!("no grid path from start to goal");
    }
    Ok(NavigationTask {
        id: format!("{id}/custom"),
        env_id: id.to_string(),
        start,
        goal,
        astar_length: bench::path_cells_length(&cells) * g.resolution,
        path: cells.iter().map(|c| g.center(c.0, c.1)).collect(),
    })
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
