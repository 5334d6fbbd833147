//! Polygonal worlds and everything derived from them: signed distance,
//! rasterized grids, simulated LiDAR and the robot-centered local maps the
//! samplers plan against.

mod generate;
mod grid;
mod lidar;

pub use generate::{generate_cluttered_environment, sample_free_poses, GenerationSpec};
pub use grid::{
    build_sdf_grid, rasterize, sdf_from_occupancy, GridGeometry, OccupancyGrid, SdfGrid,
};
pub use lidar::{
    cast_ray, oracle_local_maps, scan_cell_labels, scan_to_local_maps, simulate_lidar, Beam,
    CellLabel, LidarScan, LocalMapSpec, LocalPerception,
};

use crate::geom::{point_in_polygon, point_segment_distance, signed_area2, Point, Pose};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Signed distance reported for a world without obstacles.
pub const EMPTY_WORLD_DISTANCE: f64 = f64::INFINITY;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("could not place obstacles after {attempts} attempts; generation spec is too dense")]
    GenerationExhausted { attempts: usize },
    #[error("free space too small: accepted {accepted} of {requested} poses after {draws} draws")]
    FreeSpaceExhausted {
        requested: usize,
        accepted: usize,
        draws: usize,
    },
    #[error("pose ({x:.3}, {y:.3}) is in collision")]
    PoseInCollision { x: f64, y: f64 },
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Distance from an interior point to the nearest side; negative outside.
    pub fn inner_distance(&self, p: Point) -> f64 {
        (p.x - self.min.x)
            .min(self.max.x - p.x)
            .min(p.y - self.min.y)
            .min(self.max.y - p.y)
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            self.min,
            Point::new(self.max.x, self.min.y),
            self.max,
            Point::new(self.min.x, self.max.y),
        ]
    }
}

/// Simple polygon, vertices counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(p, &self.vertices)
    }

    pub fn boundary_distance(&self, p: Point) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_ccw(&self) -> bool {
        signed_area2(&self.vertices) > 0.0
    }

    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                // Neighbouring edges share a vertex by construction.
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if crate::geom::segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }
}

/// A bounded planar world with polygonal obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonEnvironment {
    pub bounds: Bounds,
    pub obstacles: Vec<Polygon>,
}

impl PolygonEnvironment {
    pub fn new(bounds: Bounds, obstacles: Vec<Polygon>) -> Self {
        Self { bounds, obstacles }
    }

    pub fn empty(bounds: Bounds) -> Self {
        Self::new(bounds, Vec::new())
    }

    /// Checks vertex containment, orientation and simplicity of every obstacle.
    pub fn validate(&self) -> Result<(), EnvError> {
        for (i, poly) in self.obstacles.iter().enumerate() {
            if poly.vertices.iter().any(|v| !self.bounds.contains(*v)) {
                return Err(EnvError::Invalid(format!("obstacle {i} leaves the bounds")));
            }
            if !poly.is_ccw() {
                return Err(EnvError::Invalid(format!("obstacle {i} is not counter-clockwise")));
            }
            if !poly.is_simple() {
                return Err(EnvError::Invalid(format!("obstacle {i} self-intersects")));
            }
        }
        Ok(())
    }

    /// Distance to the nearest obstacle boundary, negative inside an obstacle.
    /// Infinite when there are no obstacles. The world bounds are not obstacles here.
    pub fn signed_distance(&self, p: Point) -> f64 {
        let mut best = EMPTY_WORLD_DISTANCE;
        let mut inside = false;
        for poly in &self.obstacles {
            best = best.min(poly.boundary_distance(p));
            if !inside && poly.contains(p) {
                inside = true;
            }
        }
        if inside {
            -best
        } else {
            best
        }
    }

    /// Signed distance that also treats the world bounds as walls.
    pub fn clearance(&self, p: Point) -> f64 {
        self.signed_distance(p).min(self.bounds.inner_distance(p))
    }

    pub fn in_obstacle(&self, p: Point) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)?;
        let env: PolygonEnvironment = serde_json::from_str(&text)?;
        env.validate()?;
        Ok(env)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnvError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Anything that can report clearance at a point. `None` means the point is
/// outside the map, which collision checks treat as occupied.
pub trait ClearanceMap {
    fn clearance_at(&self, p: Point) -> Option<f64>;
}

impl ClearanceMap for PolygonEnvironment {
    fn clearance_at(&self, p: Point) -> Option<f64> {
        if !self.bounds.contains(p) {
            return None;
        }
        Some(self.clearance(p))
    }
}

impl ClearanceMap for SdfGrid {
    fn clearance_at(&self, p: Point) -> Option<f64> {
        self.interpolate(p)
    }
}

impl ClearanceMap for LocalPerception {
    fn clearance_at(&self, p: Point) -> Option<f64> {
        self.sdf.interpolate(p)
    }
}

/// Disc footprint check: collides iff clearance at the center is strictly below `radius`.
pub fn footprint_in_collision<M: ClearanceMap + ?Sized>(map: &M, position: Point, radius: f64) -> bool {
    match map.clearance_at(position) {
        Some(d) => d < radius,
        None => true,
    }
}

pub fn pose_in_collision<M: ClearanceMap + ?Sized>(map: &M, pose: Pose, radius: f64) -> bool {
    footprint_in_collision(map, pose.position(), radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square_env() -> PolygonEnvironment {
        PolygonEnvironment::new(
            Bounds::new(Point::new(-5.0, -5.0), Point::new(5.0, 5.0)),
            vec![Polygon::new(vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(0.0, 1.0),
            ])],
        )
    }

    #[test]
    fn signed_distance_square() {
        let env = unit_square_env();
        assert!((env.signed_distance(Point::new(0.5, 0.5)) + 0.5).abs() < 1e-12);
        assert!((env.signed_distance(Point::new(2.0, 0.5)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signed_distance_empty_is_sentinel() {
        let env = PolygonEnvironment::empty(unit_square_env().bounds);
        assert_eq!(env.signed_distance(Point::new(0.0, 0.0)), EMPTY_WORLD_DISTANCE);
    }

    #[test]
    fn signed_distance_matches_boundary_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            // Random star-shaped polygon around the origin.
            let n = rng.random_range(3..9);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let verts: Vec<Point> = angles
                .iter()
                .map(|a| {
                    let r = rng.random_range(0.5..2.0);
                    Point::new(r * a.cos(), r * a.sin())
                })
                .collect();
            let poly = Polygon::new(verts);
            let env = PolygonEnvironment::new(
                Bounds::new(Point::new(-5.0, -5.0), Point::new(5.0, 5.0)),
                vec![poly.clone()],
            );
            let p = Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            // Dense boundary sampling, 10^4 points overall.
            let per_edge = 10_000 / poly.vertices.len();
            let mut best = f64::INFINITY;
            for (a, b) in poly.edges() {
                for k in 0..=per_edge {
                    let t = k as f64 / per_edge as f64;
                    let q = a.add(b.sub(a).scale(t));
                    best = best.min(p.dist(q));
                }
            }
            let expected = if poly.contains(p) { -best } else { best };
            assert!((env.signed_distance(p) - expected).abs() < 1e-3);
        }
    }

    #[test]
    fn footprint_boundary_is_not_collision() {
        let env = unit_square_env();
        // Exactly 0.3 m to the right of the square's right edge.
        assert!(!footprint_in_collision(&env, Point::new(1.3, 0.5), 0.3));
        assert!(footprint_in_collision(&env, Point::new(1.29, 0.5), 0.3));
        assert!(footprint_in_collision(&env, Point::new(0.5, 0.5), 0.3));
        assert!(!footprint_in_collision(&env, Point::new(-3.0, -3.0), 0.3));
        // Outside bounds is conservative.
        assert!(footprint_in_collision(&env, Point::new(6.0, 0.0), 0.3));
    }

    #[test]
    fn footprint_matches_analytic_disc_polygon_overlap() {
        // Disc-polygon overlap: center inside, or an edge within the radius.
        let env = unit_square_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = Point::new(rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0));
            let r = 0.3;
            let overlap = env.obstacles[0].contains(p)
                || env.obstacles[0]
                    .edges()
                    .any(|(a, b)| point_segment_distance(p, a, b) < r);
            assert_eq!(footprint_in_collision(&env, p, r), overlap, "{p:?}");
        }
    }

    #[test]
    fn json_round_trip() {
        let env = unit_square_env();
        let text = serde_json::to_string(&env).unwrap();
        assert!(text.contains("[[0.0,0.0],[1.0,0.0]"));
        let back: PolygonEnvironment = serde_json::from_str(&text).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn validate_rejects_clockwise() {
        let mut env = unit_square_env();
        env.obstacles[0].vertices.reverse();
        assert!(env.validate().is_err());
    }
}
