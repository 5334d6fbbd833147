use super::{Bounds, EnvError, Polygon, PolygonEnvironment};
use crate::geom::{segment_segment_distance, Point, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Parameters for procedurally generated cluttered worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSpec {
    pub width: f64,
    pub height: f64,
    /// Inclusive range of obstacle counts.
    pub obstacles: [usize; 2],
    /// Inclusive range of vertex counts for star-shaped obstacles.
    pub vertices: [usize; 2],
    /// Range of obstacle circumradii (m).
    pub radius: [f64; 2],
    /// Relative radial jitter of star vertices in `[0, 1)`; larger means deeper notches.
    pub concavity: f64,
    /// Probability that an obstacle is a U-shaped bracket instead of a star.
    pub bracket_fraction: f64,
    /// Minimum gap between any two obstacles (m).
    pub min_clearance: f64,
    pub footprint_radius: f64,
    /// Placement attempts per obstacle before giving up.
    pub max_attempts: usize,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        Self {
            width: 10.0,
            height: 10.0,
            obstacles: [8, 14],
            vertices: [5, 10],
            radius: [0.4, 1.2],
            concavity: 0.55,
            bracket_fraction: 0.6,
            min_clearance: 0.7,
            footprint_radius: 0.3,
            max_attempts: 2000,
        }
    }
}

impl GenerationSpec {
    pub fn with_obstacles(mut self, n: usize) -> Self {
        self.obstacles = [n, n];
        self
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::new(Point::new(0.0, 0.0), Point::new(self.width, self.height))
    }
}

fn star_polygon(rng: &mut ChaCha8Rng, center: Point, spec: &GenerationSpec) -> Polygon {
    let n = rng.random_range(spec.vertices[0].max(3)..=spec.vertices[1].max(3));
    let r = rng.random_range(spec.radius[0]..=spec.radius[1]);
    let phase = rng.random_range(0.0..TAU);
    let slot = TAU / n as f64;
    let vertices = (0..n)
        .map(|i| {
            let a = phase + slot * (i as f64 + rng.random_range(0.1..0.9));
            let rad = r * (1.0 - spec.concavity * rng.random_range(0.0..1.0));
            Point::new(center.x + rad * a.cos(), center.y + rad * a.sin())
        })
        .collect();
    Polygon::new(vertices)
}

/// U-shaped bracket with its opening facing a random direction.
fn bracket_polygon(rng: &mut ChaCha8Rng, center: Point, spec: &GenerationSpec) -> Polygon {
    let r = rng.random_range(spec.radius[0]..=spec.radius[1]).max(0.5);
    let w = r * 1.4;
    let depth = r * 1.4;
    let t = (0.15 * r).max(0.12);
    // CCW outline in the local frame, opening towards +x.
    let local = [
        Point::new(-depth / 2.0, -w / 2.0),
        Point::new(depth / 2.0, -w / 2.0),
        Point::new(depth / 2.0, -w / 2.0 + t),
        Point::new(-depth / 2.0 + t, -w / 2.0 + t),
        Point::new(-depth / 2.0 + t, w / 2.0 - t),
        Point::new(depth / 2.0, w / 2.0 - t),
        Point::new(depth / 2.0, w / 2.0),
        Point::new(-depth / 2.0, w / 2.0),
    ];
    let pose = Pose::new(center.x, center.y, rng.random_range(0.0..TAU));
    Polygon::new(local.iter().map(|p| pose.to_world(*p)).collect())
}

fn polygon_gap(a: &Polygon, b: &Polygon) -> f64 {
    if a.vertices.iter().any(|v| b.contains(*v)) || b.vertices.iter().any(|v| a.contains(*v)) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p1, p2) in a.edges() {
        for (q1, q2) in b.edges() {
            best = best.min(segment_segment_distance(p1, p2, q1, q2));
        }
    }
    best
}

/// Largest clearance over a coarse probe lattice.
fn max_free_clearance(env: &PolygonEnvironment, step: f64) -> f64 {
    let b = env.bounds;
    let nx = (b.width() / step).ceil() as usize;
    let ny = (b.height() / step).ceil() as usize;
    let mut best = f64::NEG_INFINITY;
    for iy in 0..ny {
        for ix in 0..nx {
            let p = Point::new(b.min.x + (ix as f64 + 0.5) * step, b.min.y + (iy as f64 + 0.5) * step);
            best = best.max(env.clearance(p));
        }
    }
    best
}

/// Rejection-sampled world: obstacles are simple CCW polygons, pairwise at least
/// `min_clearance` apart, and some free disc of radius twice the footprint remains.
/// Deterministic in `seed`.
pub fn generate_cluttered_environment(seed: u64, spec: &GenerationSpec) -> Result<PolygonEnvironment, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = spec.bounds();
    let count = rng.random_range(spec.obstacles[0]..=spec.obstacles[1].max(spec.obstacles[0]));
    let mut obstacles: Vec<Polygon> = Vec::with_capacity(count);
    let margin = spec.radius[1];
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..spec.max_attempts {
            let center = Point::new(
                rng.random_range(bounds.min.x + margin * 0.5..bounds.max.x - margin * 0.5),
                rng.random_range(bounds.min.y + margin * 0.5..bounds.max.y - margin * 0.5),
            );
            let poly = if rng.random_bool(spec.bracket_fraction.clamp(0.0, 1.0)) {
                bracket_polygon(&mut rng, center, spec)
            } else {
                star_polygon(&mut rng, center, spec)
            };
            if poly.vertices.iter().any(|v| !bounds.contains(*v)) || !poly.is_simple() || !poly.is_ccw() {
                continue;
            }
            if obstacles.iter().any(|o| polygon_gap(o, &poly) < spec.min_clearance) {
                continue;
            }
            obstacles.push(poly);
            placed = true;
            break;
        }
        if !placed {
            return Err(EnvError::GenerationExhausted {
                attempts: spec.max_attempts,
            });
        }
    }
    let env = PolygonEnvironment::new(bounds, obstacles);
    if max_free_clearance(&env, 0.1) < 2.0 * spec.footprint_radius {
        return Err(EnvError::GenerationExhausted {
            attempts: spec.max_attempts,
        });
    }
    Ok(env)
}

/// Uniform collision-free poses whose clearance (obstacles and bounds) is at
/// least `footprint_radius`. Deterministic in `seed`.
pub fn sample_free_poses(
    env: &PolygonEnvironment,
    count: usize,
    footprint_radius: f64,
    seed: u64,
) -> Result<Vec<Pose>, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = env.bounds;
    let cap = 10_000 * count.max(1);
    let mut poses = Vec::with_capacity(count);
    let mut draws = 0;
    while poses.len() < count {
        if draws >= cap {
            return Err(EnvError::FreeSpaceExhausted {
                requested: count,
                accepted: poses.len(),
                draws,
            });
        }
        draws += 1;
        let p = Point::new(rng.random_range(b.min.x..=b.max.x), rng.random_range(b.min.y..=b.max.y));
        let theta = rng.random_range(0.0..TAU);
        if env.clearance(p) >= footprint_radius {
            poses.push(Pose::new(p.x, p.y, theta));
        }
    }
    Ok(poses)
}
