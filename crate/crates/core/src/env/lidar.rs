use super::grid::{sdf_from_occupancy, GridGeometry, OccupancyGrid, SdfGrid};
use super::{EnvError, PolygonEnvironment};
use crate::geom::{ray_segment_hit, Point, Pose};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    /// Angle relative to the robot heading, in `[0, 2pi)`.
    pub bearing: f64,
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub pose: Pose,
    pub beams: Vec<Beam>,
    pub max_range: f64,
}

/// Side length and resolution of the square robot-centered local map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalMapSpec {
    pub side: f64,
    pub resolution: f64,
}

impl Default for LocalMapSpec {
    fn default() -> Self {
        Self {
            side: 8.0,
            resolution: 0.05,
        }
    }
}

impl LocalMapSpec {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::centered(self.side, self.resolution)
    }
}

/// Robot-frame costmap and SDF. The robot sits at the grid center facing +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPerception {
    pub costmap: OccupancyGrid,
    pub sdf: SdfGrid,
    pub robot_pose_world: Pose,
}

impl LocalPerception {
    pub fn from_costmap(costmap: OccupancyGrid, robot_pose_world: Pose) -> Self {
        let sdf = sdf_from_occupancy(&costmap);
        Self {
            costmap,
            sdf,
            robot_pose_world,
        }
    }

    /// A map with nothing in it.
    pub fn empty(spec: &LocalMapSpec) -> Self {
        Self::from_costmap(OccupancyGrid::empty(spec.geometry()), Pose::default())
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.costmap.geometry
    }

    /// Stable fingerprint of the occupancy content (FNV-1a over occupied cell indices).
    pub fn content_hash(&self) -> u64 {
        let mut h = crate::seeds::Fnv1a::new();
        let g = self.geometry();
        h.write_u64(g.width as u64);
        h.write_u64(g.height as u64);
        h.write_u64(g.resolution.to_bits());
        for (i, v) in self.costmap.values.iter().enumerate() {
            if *v >= 0.5 {
                h.write_u64(i as u64);
            }
        }
        h.finish()
    }
}

/// Distance from `origin` along world bearing `bearing` to the first obstacle edge
/// or world boundary, clamped to `max_range`.
pub fn cast_ray(env: &PolygonEnvironment, origin: Point, bearing: f64, max_range: f64) -> f64 {
    let dir = Point::new(bearing.cos(), bearing.sin());
    let corners = env.bounds.corners();
    let bound_edges = (0..4).map(|i| (corners[i], corners[(i + 1) % 4]));
    env.obstacles
        .iter()
        .flat_map(|o| o.edges())
        .chain(bound_edges)
        .filter_map(|(a, b)| ray_segment_hit(origin, dir, a, b))
        .fold(max_range, f64::min)
}

/// 360-degree scan with `beam_count` evenly spaced beams starting at the heading.
pub fn simulate_lidar(
    env: &PolygonEnvironment,
    pose: Pose,
    beam_count: usize,
    max_range: f64,
) -> Result<LidarScan, EnvError> {
    let p = pose.position();
    if !env.bounds.contains(p) || env.in_obstacle(p) {
        return Err(EnvError::PoseInCollision { x: p.x, y: p.y });
    }
    let beams = (0..beam_count)
        .map(|i| {
            let bearing = TAU * i as f64 / beam_count as f64;
            Beam {
                bearing,
                range: cast_ray(env, p, pose.theta + bearing, max_range),
            }
        })
        .collect();
    Ok(LidarScan {
        pose,
        beams,
        max_range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellLabel {
    Unknown,
    Free,
    Occupied,
}

/// Grid cells visited by the segment `a -> b`, in order (Amanatides-Woo traversal).
/// Cells outside the grid are skipped.
fn traverse(g: &GridGeometry, a: Point, b: Point, mut visit: impl FnMut(usize, usize)) {
    let res = g.resolution;
    let gx0 = (a.x - g.origin.x) / res;
    let gy0 = (a.y - g.origin.y) / res;
    let gx1 = (b.x - g.origin.x) / res;
    let gy1 = (b.y - g.origin.y) / res;
    let mut ix = gx0.floor() as i64;
    let mut iy = gy0.floor() as i64;
    let ex = gx1.floor() as i64;
    let ey = gy1.floor() as i64;
    let dx = gx1 - gx0;
    let dy = gy1 - gy0;
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        ((ix + 1) as f64 - gx0) / dx
    } else if dx < 0.0 {
        (ix as f64 - gx0) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((iy + 1) as f64 - gy0) / dy
    } else if dy < 0.0 {
        (iy as f64 - gy0) / dy
    } else {
        f64::INFINITY
    };
    let in_grid = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < g.width && (y as usize) < g.height;
    let limit = (ex - ix).abs() + (ey - iy).abs() + 2;
    for _ in 0..=limit {
        if in_grid(ix, iy) {
            visit(ix as usize, iy as usize);
        }
        if ix == ex && iy == ey {
            break;
        }
        if t_max_x < t_max_y {
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            iy += step_y;
            t_max_y += t_delta_y;
        }
    }
}

/// Per-cell labels produced by a scan in the robot frame. Beam endpoints short
/// of `max_range` are `Occupied`; cells traversed before a beam's endpoint are
/// `Free` unless some beam ended in them, in which case the hit wins.
pub fn scan_cell_labels(scan: &LidarScan, geometry: &GridGeometry) -> Vec<CellLabel> {
    let mut labels = vec![CellLabel::Unknown; geometry.len()];
    let mut hits = Vec::new();
    let origin = Point::new(0.0, 0.0);
    for beam in &scan.beams {
        let end = Point::new(beam.range * beam.bearing.cos(), beam.range * beam.bearing.sin());
        let hit_cell = if beam.range < scan.max_range {
            geometry.cell_of(end)
        } else {
            None
        };
        traverse(geometry, origin, end, |ix, iy| {
            if Some((ix, iy)) != hit_cell {
                let i = geometry.index(ix, iy);
                labels[i] = CellLabel::Free;
            }
        });
        if let Some((ix, iy)) = hit_cell {
            hits.push(geometry.index(ix, iy));
        }
    }
    for i in hits {
        labels[i] = CellLabel::Occupied;
    }
    labels
}

/// Robot-centered costmap and SDF from a scan. Unobserved cells are free.
pub fn scan_to_local_maps(scan: &LidarScan, geometry: &GridGeometry) -> LocalPerception {
    let values = scan_cell_labels(scan, geometry)
        .into_iter()
        .map(|l| if l == CellLabel::Occupied { 1.0 } else { 0.0 })
        .collect();
    LocalPerception::from_costmap(OccupancyGrid::new(*geometry, values), scan.pose)
}

/// Ground-truth robot-centered maps: a cell is occupied iff its center, mapped
/// to the world, is inside an obstacle or outside the world bounds.
pub fn oracle_local_maps(env: &PolygonEnvironment, pose: Pose, geometry: &GridGeometry) -> LocalPerception {
    let values = geometry
        .centers()
        .map(|(_, _, c)| {
            let w = pose.to_world(c);
            if !env.bounds.contains(w) || env.in_obstacle(w) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    LocalPerception::from_costmap(OccupancyGrid::new(*geometry, values), pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Bounds, Polygon};
    use crate::geom::ray_segment_hit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn big_bounds() -> Bounds {
        Bounds::new(Point::new(-20.0, -20.0), Point::new(20.0, 20.0))
    }

    #[test]
    fn ray_to_wall() {
        let wall = Polygon::new(vec![
            Point::new(3.0, -1.0),
            Point::new(3.5, -1.0),
            Point::new(3.5, 1.0),
            Point::new(3.0, 1.0),
        ]);
        let env = PolygonEnvironment::new(big_bounds(), vec![wall]);
        assert!((cast_ray(&env, Point::new(1.0, 0.0), 0.0, 10.0) - 2.0).abs() < 1e-12);
        assert_eq!(cast_ray(&env, Point::new(1.0, 0.0), std::f64::consts::PI, 4.0), 4.0);
    }

    fn random_scene(rng: &mut ChaCha8Rng) -> PolygonEnvironment {
        let mut obstacles = Vec::new();
        for _ in 0..5 {
            let cx = rng.random_range(-8.0..8.0);
            let cy = rng.random_range(-8.0..8.0);
            let s = rng.random_range(0.3..1.5);
            obstacles.push(Polygon::new(vec![
                Point::new(cx - s, cy - s),
                Point::new(cx + s, cy - s),
                Point::new(cx + s, cy + s),
                Point::new(cx - s, cy + s),
            ]));
        }
        PolygonEnvironment::new(big_bounds(), obstacles)
    }

    #[test]
    fn cast_ray_matches_brute_force_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let env = random_scene(&mut rng);
            let o = Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let bearing = rng.random_range(0.0..TAU);
            let dir = Point::new(bearing.cos(), bearing.sin());
            let mut segs: Vec<(Point, Point)> = env.obstacles.iter().flat_map(|p| p.edges()).collect();
            let c = env.bounds.corners();
            for i in 0..4 {
                segs.push((c[i], c[(i + 1) % 4]));
            }
            let mut best = 6.0f64;
            for (a, b) in segs {
                if let Some(s) = ray_segment_hit(o, dir, a, b) {
                    best = best.min(s);
                }
            }
            assert!((cast_ray(&env, o, bearing, 6.0) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn open_world_scan_is_max_range() {
        let env = PolygonEnvironment::empty(big_bounds());
        let scan = simulate_lidar(&env, Pose::new(0.0, 0.0, 0.3), 360, 4.0).unwrap();
        assert_eq!(scan.beams.len(), 360);
        assert!(scan.beams.iter().all(|b| b.range == 4.0));
        assert!(scan.beams.windows(2).all(|w| w[0].bearing < w[1].bearing));
        assert!(scan.beams.iter().all(|b| (0.0..TAU).contains(&b.bearing)));
    }

    #[test]
    fn ring_scan_ranges_equal_radius() {
        // Hollow ring around the robot: an outer 64-gon with a slit; use a
        // set of thin wedges instead so every obstacle stays simple.
        let r = 2.0;
        let n = 64;
        let mut obstacles = Vec::new();
        for i in 0..n {
            let a0 = TAU * i as f64 / n as f64;
            let a1 = TAU * (i + 1) as f64 / n as f64;
            obstacles.push(Polygon::new(vec![
                Point::new(r * a0.cos(), r * a0.sin()),
                Point::new(r * a1.cos(), r * a1.sin()),
                Point::new((r + 0.2) * a1.cos(), (r + 0.2) * a1.sin()),
                Point::new((r + 0.2) * a0.cos(), (r + 0.2) * a0.sin()),
            ]));
        }
        let env = PolygonEnvironment::new(big_bounds(), obstacles);
        let scan = simulate_lidar(&env, Pose::new(0.0, 0.0, 0.0), 90, 4.0).unwrap();
        for b in &scan.beams {
            // Chord sagitta bound for a 64-gon.
            assert!(b.range <= r + 1e-9 && b.range >= r * (std::f64::consts::PI / n as f64).cos() - 1e-9);
        }
    }

    #[test]
    fn scan_beams_equal_cast_ray() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let env = random_scene(&mut rng);
        let pose = (0..)
            .map(|_| Pose::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-3.0..3.0)))
            .find(|p| !env.in_obstacle(p.position()))
            .unwrap();
        let scan = simulate_lidar(&env, pose, 180, 4.0).unwrap();
        for b in &scan.beams {
            assert_eq!(b.range, cast_ray(&env, pose.position(), pose.theta + b.bearing, 4.0));
        }
    }

    #[test]
    fn lidar_rejects_colliding_pose() {
        let env = random_scene(&mut ChaCha8Rng::seed_from_u64(4));
        let inside = env.obstacles[0].vertices[0].add(env.obstacles[0].vertices[2]).scale(0.5);
        assert!(simulate_lidar(&env, Pose::new(inside.x, inside.y, 0.0), 8, 4.0).is_err());
    }

    #[test]
    fn shrinking_range_never_increases_beams() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let env = random_scene(&mut rng);
        let o = Point::new(0.1, 0.1);
        if env.in_obstacle(o) {
            return;
        }
        for i in 0..72 {
            let b = TAU * i as f64 / 72.0;
            assert!(cast_ray(&env, o, b, 2.0) <= cast_ray(&env, o, b, 5.0));
        }
    }

    #[test]
    fn all_max_range_scan_gives_free_map() {
        let env = PolygonEnvironment::empty(big_bounds());
        let scan = simulate_lidar(&env, Pose::default(), 360, 4.0).unwrap();
        let spec = LocalMapSpec::default();
        let lp = scan_to_local_maps(&scan, &spec.geometry());
        assert!(lp.costmap.values.iter().all(|v| *v == 0.0));
        assert!(lp.sdf.values.iter().all(|v| *v == spec.geometry().sentinel()));
    }

    #[test]
    fn single_hit_lands_in_front() {
        let scan = LidarScan {
            pose: Pose::default(),
            beams: vec![
                Beam { bearing: 0.0, range: 2.0 },
                Beam { bearing: 1.0, range: 4.0 },
            ],
            max_range: 4.0,
        };
        let g = LocalMapSpec::default().geometry();
        let lp = scan_to_local_maps(&scan, &g);
        let (ix, iy) = g.cell_of(Point::new(2.0, 0.0)).unwrap();
        assert_eq!(lp.costmap.get(ix, iy), 1.0);
        assert_eq!(lp.costmap.values.iter().filter(|v| **v == 1.0).count(), 1);
    }

    fn brute_sdf(grid: &OccupancyGrid) -> Vec<f64> {
        let g = grid.geometry;
        let mut out = Vec::new();
        for (ix, iy, c) in g.centers() {
            let occ = grid.is_occupied(ix, iy);
            let mut best = f64::INFINITY;
            for (jx, jy, d) in g.centers() {
                if grid.is_occupied(jx, jy) != occ {
                    best = best.min(c.dist(d));
                }
            }
            let v = best - g.resolution / 2.0;
            out.push(if occ { -v } else { v });
        }
        out
    }

    #[test]
    fn local_sdf_matches_nearest_cell_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let env = random_scene(&mut rng);
        let pose = (0..)
            .map(|_| Pose::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-3.0..3.0)))
            .find(|p| !env.in_obstacle(p.position()))
            .unwrap();
        let scan = simulate_lidar(&env, pose, 360, 2.0).unwrap();
        let spec = LocalMapSpec { side: 4.0, resolution: 0.1 };
        let lp = scan_to_local_maps(&scan, &spec.geometry());
        if !lp.costmap.values.iter().any(|v| *v == 1.0) {
            return;
        }
        let expected = brute_sdf(&lp.costmap);
        for (a, b) in lp.sdf.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scan_labels_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let env = random_scene(&mut rng);
        let pose = Pose::new(0.5, -0.5, 0.2);
        if env.in_obstacle(pose.position()) {
            return;
        }
        let scan = simulate_lidar(&env, pose, 360, 4.0).unwrap();
        let g = LocalMapSpec::default().geometry();
        let labels = scan_cell_labels(&scan, &g);
        let lp = scan_to_local_maps(&scan, &g);
        for (l, v) in labels.iter().zip(&lp.costmap.values) {
            assert_eq!(*l == CellLabel::Occupied, *v == 1.0);
        }
    }

    #[test]
    fn oracle_maps_mark_outside_bounds() {
        let env = PolygonEnvironment::empty(Bounds::new(Point::new(0.0, 0.0), Point::new(10.0, 10.0)));
        let g = LocalMapSpec { side: 4.0, resolution: 0.1 }.geometry();
        let lp = oracle_local_maps(&env, Pose::new(1.0, 5.0, 0.0), &g);
        // Cells more than 1 m behind the robot are outside the world.
        let (ix, iy) = g.cell_of(Point::new(-1.5, 0.0)).unwrap();
        assert_eq!(lp.costmap.get(ix, iy), 1.0);
        let (ix, iy) = g.cell_of(Point::new(1.5, 0.0)).unwrap();
        assert_eq!(lp.costmap.get(ix, iy), 0.0);
    }
}
