use super::{
    local_map_dataset, mean, paired_bootstrap, sample_open_loop, write_csv_rows, write_json, BenchError,
    CheckResult, ExperimentConfig, LocalMapCase, RolloutSetup, SamplerKind,
};
use crate::flowpolicy::cached_cuniform_policy;
use crate::geom::Pose;
use crate::levelsets::{build_reachability_graph, prune_inevitable_collisions, SafeLevelSets};
use crate::metrics::{uniformity_report, UniformityReport};
use crate::samplers::TrajectoryBatch;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityRow {
    pub map: String,
    pub sampler: SamplerKind,
    pub budget: usize,
    pub seed: u64,
    pub avg_kl: Option<f64>,
    pub collision_free_ratio: f64,
    pub avg_entropy_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LevelRow<'a> {
    case: &'a str,
    map: &'a str,
    sampler: SamplerKind,
    t: usize,
    level_size: usize,
    samples: usize,
    on_level: f64,
    kl: Option<f64>,
    entropy_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformitySummary {
    pub sampler: SamplerKind,
    pub maps: usize,
    pub avg_kl: f64,
    pub collision_free_ratio: f64,
    pub avg_entropy_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UniformityTable {
    pub rows: Vec<UniformityRow>,
    pub reports: Vec<(String, UniformityReport)>,
    pub summary: Vec<UniformitySummary>,
}

fn open_loop_seed(cfg: &ExperimentConfig, case: &LocalMapCase) -> u64 {
    cfg.seed(&["open-loop", &case.id])
}

fn evaluate(
    cfg: &ExperimentConfig,
    case: &LocalMapCase,
    ls: &SafeLevelSets,
    setup: RolloutSetup,
    spec: &crate::levelsets::DiscretizationSpec,
) -> Result<Vec<UniformityReport>, BenchError> {
    let cu = cached_cuniform_policy(&cfg.discretization)?;
    let seed = open_loop_seed(cfg, case);
    Ok(cfg
        .samplers
        .iter()
        .map(|&kind| {
            let trajs = sample_open_loop(kind, case, &cu, cfg, setup, cfg.uniformity_budget, seed);
            let batch = TrajectoryBatch::annotate(trajs, &case.perception, cfg.cost.footprint_radius);
            uniformity_report(&batch, ls, spec, kind.name(), cfg.uniformity_budget, seed, cfg.epsilon)
        })
        .collect())
}

fn summarize(rows: &[UniformityRow], samplers: &[SamplerKind]) -> Vec<UniformitySummary> {
    samplers
        .iter()
        .map(|&s| {
            let mine: Vec<&UniformityRow> = rows.iter().filter(|r| r.sampler == s).collect();
            UniformitySummary {
                sampler: s,
                maps: mine.len(),
                avg_kl: mean(mine.iter().filter_map(|r| r.avg_kl)),
                collision_free_ratio: mean(mine.iter().map(|r| r.collision_free_ratio)),
                avg_entropy_ratio: mean(mine.iter().filter_map(|r| r.avg_entropy_ratio)),
            }
        })
        .collect()
}

fn row(map: &str, kind: SamplerKind, r: &UniformityReport) -> UniformityRow {
    UniformityRow {
        map: map.to_string(),
        sampler: kind,
        budget: r.budget,
        seed: r.seed,
        avg_kl: r.avg_kl,
        collision_free_ratio: r.collision_free_ratio,
        avg_entropy_ratio: r.avg_entropy_ratio,
    }
}

fn level_rows<'a>(case: &'a str, reports: &'a [(String, UniformityReport)], samplers: &[SamplerKind]) -> Vec<LevelRow<'a>> {
    reports
        .iter()
        .flat_map(|(map, r)| {
            let kind = samplers
                .iter()
                .copied()
                .find(|k| k.name() == r.sampler)
                .expect("report names a configured sampler");
            r.levels.iter().map(move |l| LevelRow {
                case,
                map,
                sampler: kind,
                t: l.t,
                level_size: l.level_size,
                samples: l.samples,
                on_level: l.on_level,
                kl: l.kl,
                entropy_ratio: l.entropy_ratio,
            })
        })
        .collect()
}

/// Per-map, per-sampler uniformity of the configured samplers against the
/// map's safe level sets.
pub fn run_uniformity(cfg: &ExperimentConfig) -> Result<UniformityTable, BenchError> {
    cfg.validate()?;
    let cases = local_map_dataset(cfg)?;
    let setup = RolloutSetup::nominal(&cfg.discretization);
    let mut table = UniformityTable::default();
    for case in &cases {
        let reports = evaluate(cfg, case, &case.bundle.level_sets, setup, &cfg.discretization)?;
        for (kind, r) in cfg.samplers.iter().zip(reports) {
            table.rows.push(row(&case.id, *kind, &r));
            table.reports.push((case.id.clone(), r));
        }
        log::info!("uniformity {}: done", case.id);
    }
    table.summary = summarize(&table.rows, &cfg.samplers);
    if let Some(path) = cfg.output_file("uniformity.csv") {
        write_csv_rows(&path, &table.rows)?;
        write_csv_rows(
            &path.with_file_name("uniformity_levels.csv"),
            &level_rows("nominal", &table.reports, &cfg.samplers),
        )?;
        write_json(&path.with_file_name("uniformity_summary.json"), &table.summary)?;
    }
    Ok(table)
}

/// Paired per-map values of two samplers, for maps where both are defined.
fn paired(rows: &[UniformityRow], a: SamplerKind, b: SamplerKind, f: impl Fn(&UniformityRow) -> Option<f64>) -> Vec<f64> {
    let mut by_map: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let e = by_map.entry(&r.map).or_default();
        if r.sampler == a {
            e.0 = f(r);
        } else if r.sampler == b {
            e.1 = f(r);
        }
    }
    by_map
        .values()
        .filter_map(|(x, y)| Some(y.as_ref()? - x.as_ref()?))
        .collect()
}

/// Orderings of the uniformity table: KL `cfu < logmppi <= cu < mppi` and
/// collision-free ratio of `cfu` above every baseline. A strict ordering
/// passes when the bootstrap interval of the paired difference excludes zero;
/// the non-strict one passes unless the interval shows the reverse.
pub fn check_uniformity(table: &UniformityTable, resamples: usize, seed: u64) -> Vec<CheckResult> {
    use SamplerKind::*;
    let kl = |r: &UniformityRow| r.avg_kl;
    let cf = |r: &UniformityRow| Some(r.collision_free_ratio);
    let mut out = Vec::new();
    let mut strict = |name: String, d: Vec<f64>| {
        let ci = paired_bootstrap(&d, resamples, seed);
        let detail = format!("mean diff {:.4}, 95% CI [{:.4}, {:.4}], n = {}", ci.mean, ci.lo, ci.hi, ci.n);
        out.push(CheckResult::new(name, ci.n > 0 && ci.lo > 0.0, detail));
    };
    strict("kl cfu < logmppi".into(), paired(&table.rows, Cfu, LogMppi, kl));
    strict("kl cu < mppi".into(), paired(&table.rows, CUniform, Mppi, kl));
    for b in [CUniform, Mppi, LogMppi] {
        strict(format!("collision-free cfu > {b}"), paired(&table.rows, b, Cfu, cf));
    }
    let d = paired(&table.rows, LogMppi, CUniform, kl);
    let ci = paired_bootstrap(&d, resamples, seed);
    out.insert(
        1,
        CheckResult::new(
            "kl logmppi <= cu",
            ci.n > 0 && ci.hi >= 0.0,
            format!("mean diff {:.4}, 95% CI [{:.4}, {:.4}], n = {}", ci.mean, ci.lo, ci.hi, ci.n),
        ),
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub case: String,
    pub map: String,
    pub sampler: SamplerKind,
    pub budget: usize,
    pub seed: u64,
    pub avg_kl: Option<f64>,
    pub collision_free_ratio: f64,
    /// The scaled safe level sets differ from the nominal ones.
    pub levels_changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub case: String,
    pub sampler: SamplerKind,
    pub maps: usize,
    pub avg_kl: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub summary: Vec<ScalingSummary>,
}

/// Policies built at the nominal operating point rolled out under each
/// scaling case, scored against level sets recomputed for that case.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingTable, BenchError> {
    cfg.validate()?;
    let cases = local_map_dataset(cfg)?;
    let mut table = ScalingTable::default();
    let mut levels = Vec::new();
    let mut reports = Vec::new();
    for sc in &cfg.scaling {
        let spec = cfg.discretization.scaled(sc.speed, sc.dt, sc.horizon());
        let setup = RolloutSetup {
            speed: sc.speed,
            dt: sc.dt,
            horizon: sc.horizon(),
        };
        for case in &cases {
            let ls = match build_reachability_graph(&case.perception, &Pose::default(), &spec, cfg.cost.footprint_radius)
                .and_then(|g| prune_inevitable_collisions(&g))
            {
                Ok(g) => g.safe_level_sets(),
                Err(e) => {
                    log::warn!("scaling {} {}: skipped, {e}", sc.name, case.id);
                    continue;
                }
            };
            let changed = ls.levels != case.bundle.level_sets.levels;
            let rs = evaluate(cfg, case, &ls, setup, &spec)?;
            for (kind, r) in cfg.samplers.iter().zip(rs) {
                table.rows.push(ScalingRow {
                    case: sc.name.clone(),
                    map: case.id.clone(),
                    sampler: *kind,
                    budget: r.budget,
                    seed: r.seed,
                    avg_kl: r.avg_kl,
                    collision_free_ratio: r.collision_free_ratio,
                    levels_changed: changed,
                });
                reports.push((case.id.clone(), r));
            }
        }
        levels.push((sc.name.clone(), std::mem::take(&mut reports)));
        log::info!("scaling {}: done", sc.name);
    }
    for sc in &cfg.scaling {
        for &s in &cfg.samplers {
            let mine: Vec<&ScalingRow> = table.rows.iter().filter(|r| r.case == sc.name && r.sampler == s).collect();
            table.summary.push(ScalingSummary {
                case: sc.name.clone(),
                sampler: s,
                maps: mine.len(),
                avg_kl: mean(mine.iter().filter_map(|r| r.avg_kl)),
            });
        }
    }
    if let Some(path) = cfg.output_file("scaling.csv") {
        write_csv_rows(&path, &table.rows)?;
        let all: Vec<LevelRow> = levels
            .iter()
            .flat_map(|(name, rs)| level_rows(name, rs, &cfg.samplers))
            .collect();
        write_csv_rows(&path.with_file_name("scaling_levels.csv"), &all)?;
        write_json(&path.with_file_name("scaling_summary.json"), &table.summary)?;
    }
    Ok(table)
}

/// Per case: CFU KL below C-Uniform KL on average, and the scaled level sets
/// differ from the nominal ones on at least one map.
pub fn check_scaling(table: &ScalingTable, cases: &[super::ScalingCase]) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for sc in cases {
        let get = |s: SamplerKind| table.summary.iter().find(|r| r.case == sc.name && r.sampler == s);
        if let (Some(cfu), Some(cu)) = (get(SamplerKind::Cfu), get(SamplerKind::CUniform)) {
            out.push(CheckResult::new(
                format!("{}: kl cfu < cu", sc.name),
                cfu.avg_kl < cu.avg_kl,
                format!("{:.4} vs {:.4}", cfu.avg_kl, cu.avg_kl),
            ));
        }
        let changed = table.rows.iter().filter(|r| r.case == sc.name).any(|r| r.levels_changed);
        out.push(CheckResult::new(
            format!("{}: level sets change", sc.name),
            changed,
            String::new(),
        ));
    }
    out
}
