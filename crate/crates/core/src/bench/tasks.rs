use super::astar::{a_star, dijkstra, inflated_grid, path_cells_length, Cell};
use super::{BenchError, NavigationSpec};
use crate::env::{sample_free_poses, PolygonEnvironment};
use crate::geom::{Point, Pose};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationTask {
    pub id: String,
    pub env_id: String,
    /// Start position, heading towards the A* path point `heading_lookahead` ahead.
    pub start: Pose,
    pub goal: Point,
    /// A* path length from start to goal (m).
    pub astar_length: f64,
    /// A* path as world points, start first.
    pub path: Vec<Point>,
}

fn argmax_finite(d: &[f64], allowed: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in d.iter().enumerate() {
        if allowed[i] && x.is_finite() && best.is_none_or(|b| *x > d[b]) {
            best = Some(i);
        }
    }
    best
}

/// Two tasks between an approximate link-diameter pair of the free space
/// inflated by the footprint, one per direction. Endpoints are restricted to
/// cells with at least `nav.endpoint_clearance` of clearance.
///
/// Every sampled free pose proposes the endpoint cell farthest from it (by
/// grid geodesic distance); the returned pair is the longest one found by a
/// second sweep from each proposal.
pub fn compute_navigation_tasks(
    env: &PolygonEnvironment,
    env_id: &str,
    footprint_radius: f64,
    nav: &NavigationSpec,
    seed: u64,
) -> Result<[NavigationTask; 2], BenchError> {
    let grid = inflated_grid(env, nav.grid_resolution, footprint_radius);
    let geom = grid.geometry;
    let clearance = nav.endpoint_clearance.max(footprint_radius);
    let allowed: Vec<bool> = geom
        .centers()
        .map(|(ix, iy, c)| !grid.is_occupied(ix, iy) && env.clearance(c) >= clearance)
        .collect();
    let poses = sample_free_poses(env, nav.candidate_poses, footprint_radius, seed)?;
    let mut proposals: Vec<usize> = Vec::new();
    for p in &poses {
        let Some(c) = geom.cell_of(p.position()) else { continue };
        if grid.is_occupied(c.0, c.1) {
            continue;
        }
        if let Some(far) = argmax_finite(&dijkstra(&grid, c), &allowed) {
            if !proposals.contains(&far) {
                proposals.push(far);
            }
        }
    }
    let cell = |i: usize| (i % geom.width, i / geom.width);
    let mut best: Option<(f64, usize, usize)> = None;
    for &a in &proposals {
        let d = dijkstra(&grid, cell(a));
        if let Some(b) = argmax_finite(&d, &allowed) {
            if b != a && best.is_none_or(|(len, _, _)| d[b] > len) {
                best = Some((d[b], a, b));
            }
        }
    }
    let (_, a, b) = best.ok_or(BenchError::NoConnectedPair)?;
    let path = a_star(&grid, cell(a), cell(b));
    if path.len() < 2 {
        return Err(BenchError::NoConnectedPair);
    }
    let forward = task(env_id, 0, &path, &grid.geometry, nav.heading_lookahead);
    let mut rev = path;
    rev.reverse();
    let backward = task(env_id, 1, &rev, &grid.geometry, nav.heading_lookahead);
    Ok([forward, backward])
}

/// First path point at least `lookahead` along the path, or the last one.
fn lookahead_point(pts: &[Point], lookahead: f64) -> Point {
    let mut along = 0.0;
    for w in pts.windows(2) {
        along += w[0].dist(w[1]);
        if along >= lookahead {
            return w[1];
        }
    }
    pts[pts.len() - 1]
}

fn task(env_id: &str, k: usize, path: &[Cell], geom: &crate::env::GridGeometry, lookahead: f64) -> NavigationTask {
    let pts: Vec<Point> = path.iter().map(|c| geom.center(c.0, c.1)).collect();
    let d = lookahead_point(&pts, lookahead).sub(pts[0]);
    NavigationTask {
        id: format!("{env_id}/t{k}"),
        env_id: env_id.to_string(),
        start: Pose::new(pts[0].x, pts[0].y, d.y.atan2(d.x)),
        goal: *pts.last().expect("non-empty path"),
        astar_length: path_cells_length(path) * geom.resolution,
        path: pts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_cluttered_environment, Bounds, GenerationSpec};

    #[test]
    fn lookahead_walks_the_path() {
        let pts = [Point::new(0.0, 0.0), Point::new(0.5, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0)];
        assert_eq!(lookahead_point(&pts, 0.7), pts[2]);
        assert_eq!(lookahead_point(&pts, 0.1), pts[1]);
        assert_eq!(lookahead_point(&pts, 9.0), pts[3]);
    }

    #[test]
    fn empty_square_uses_opposite_corners() {
        let env = PolygonEnvironment::empty(Bounds::new(Point::new(0.0, 0.0), Point::new(6.0, 6.0)));
        let nav = NavigationSpec::default();
        let [t0, t1] = compute_navigation_tasks(&env, "sq", 0.3, &nav, 1).unwrap();
        let d = t0.start.position().dist(t0.goal);
        let side = 6.0 - 2.0 * nav.endpoint_clearance;
        assert!(d > 0.95 * side * 2.0f64.sqrt(), "pair distance {d}");
        assert_eq!(t0.start.position(), t1.goal);
        assert_eq!(t1.start.position(), t0.goal);
        assert!((t0.astar_length - t1.astar_length).abs() < 1e-9);
    }

    #[test]
    fn heading_follows_the_path() {
        let env = generate_cluttered_environment(4, &GenerationSpec::default()).unwrap();
        let nav = NavigationSpec::default();
        let tasks = compute_navigation_tasks(&env, "e", 0.3, &nav, 2).unwrap();
        for t in &tasks {
            let d = lookahead_point(&t.path, nav.heading_lookahead).sub(t.path[0]);
            assert!((t.start.theta - d.y.atan2(d.x)).abs() < 1e-12);
            assert!(env.clearance(t.start.position()) >= 1.0);
            assert!(env.clearance(t.goal) >= 1.0);
        }
    }
}
