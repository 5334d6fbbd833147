use crate::env::{GridGeometry, OccupancyGrid, PolygonEnvironment};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

pub type Cell = (usize, usize);

const NEIGHBORS: [(i64, i64, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT_2),
    (1, -1, SQRT_2),
    (-1, 1, SQRT_2),
    (-1, -1, SQRT_2),
];

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    i: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on f, ties broken towards larger g, then index
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(self.g.total_cmp(&o.g))
            .then(o.i.cmp(&self.i))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Octile distance in cells.
pub fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
}

fn free(grid: &OccupancyGrid, c: Cell) -> bool {
    !grid.is_occupied(c.0, c.1)
}

fn neighbors(g: &GridGeometry, c: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
    NEIGHBORS.iter().filter_map(move |&(dx, dy, w)| {
        let x = c.0 as i64 + dx;
        let y = c.1 as i64 + dy;
        (x >= 0 && y >= 0 && (x as usize) < g.width && (y as usize) < g.height).then(|| ((x as usize, y as usize), w))
    })
}

/// 8-connected shortest path between free cells, step cost = Euclidean cell
/// distance. Diagonal moves are allowed past occupied corners. Empty when the
/// goal is unreachable or either endpoint is occupied.
pub fn a_star(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Vec<Cell> {
    let g = &grid.geometry;
    if start.0 >= g.width || start.1 >= g.height || goal.0 >= g.width || goal.1 >= g.height {
        return Vec::new();
    }
    if !free(grid, start) || !free(grid, goal) {
        return Vec::new();
    }
    let n = g.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let si = g.index(start.0, start.1);
    let gi = g.index(goal.0, goal.1);
    dist[si] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry {
        f: octile(start, goal),
        g: 0.0,
        i: si,
    });
    while let Some(Entry { g: d, i, .. }) = heap.pop() {
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if i == gi {
            break;
        }
        let c = (i % g.width, i / g.width);
        for (nc, w) in neighbors(g, c) {
            let j = g.index(nc.0, nc.1);
            if closed[j] || !free(grid, nc) {
                continue;
            }
            let nd = d + w;
            if nd < dist[j] {
                dist[j] = nd;
                parent[j] = i;
                heap.push(Entry {
                    f: nd + octile(nc, goal),
                    g: nd,
                    i: j,
                });
            }
        }
    }
    if !closed[gi] {
        return Vec::new();
    }
    let mut path = vec![goal];
    let mut i = gi;
    while i != si {
        i = parent[i];
        path.push((i % g.width, i / g.width));
    }
    path.reverse();
    path
}

/// Shortest 8-connected distances (in cells) from `start` to every cell;
/// infinite for occupied or unreachable cells.
pub fn dijkstra(grid: &OccupancyGrid, start: Cell) -> Vec<f64> {
    let g = &grid.geometry;
    let mut dist = vec![f64::INFINITY; g.len()];
    if !free(grid, start) {
        return dist;
    }
    let si = g.index(start.0, start.1);
    dist[si] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { f: 0.0, g: 0.0, i: si });
    while let Some(Entry { f: d, i, .. }) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let c = (i % g.width, i / g.width);
        for (nc, w) in neighbors(g, c) {
            let j = g.index(nc.0, nc.1);
            if !free(grid, nc) {
                continue;
            }
            let nd = d + w;
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Entry { f: nd, g: nd, i: j });
            }
        }
    }
    dist
}

/// Length of a cell path in cells.
pub fn path_cells_length(path: &[Cell]) -> f64 {
    path.windows(2).map(|w| octile(w[0], w[1])).sum()
}

/// Grid over the world bounds where a cell is occupied unless a disc of
/// `footprint_radius` fits at its center.
pub fn inflated_grid(env: &PolygonEnvironment, resolution: f64, footprint_radius: f64) -> OccupancyGrid {
    let geometry = GridGeometry::covering(env.bounds.min, env.bounds.max, resolution);
    let values = geometry
        .centers()
        .map(|(_, _, c)| {
            if env.bounds.contains(c) && env.clearance(c) >= footprint_radius {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    OccupancyGrid::new(geometry, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    fn grid(w: usize, h: usize, blocked: &[Cell]) -> OccupancyGrid {
        let geom = GridGeometry::new(Point::new(0.0, 0.0), 1.0, w, h);
        let mut g = OccupancyGrid::empty(geom);
        for c in blocked {
            let i = geom.index(c.0, c.1);
            g.values[i] = 1.0;
        }
        g
    }

    #[test]
    fn start_is_goal() {
        let g = grid(4, 4, &[]);
        assert_eq!(a_star(&g, (2, 1), (2, 1)), vec![(2, 1)]);
    }

    #[test]
    fn walled_off_goal() {
        let g = grid(5, 5, &[(3, 2), (3, 3), (3, 4), (4, 2)]);
        assert!(a_star(&g, (0, 0), (4, 4)).is_empty());
    }

    #[test]
    fn occupied_endpoint() {
        let g = grid(3, 3, &[(1, 1)]);
        assert!(a_star(&g, (1, 1), (0, 0)).is_empty());
    }

    #[test]
    fn open_grid_is_octile() {
        let g = grid(12, 7, &[]);
        let p = a_star(&g, (1, 1), (10, 5));
        assert_eq!(p.first(), Some(&(1, 1)));
        assert_eq!(p.last(), Some(&(10, 5)));
        assert!((path_cells_length(&p) - octile((1, 1), (10, 5))).abs() < 1e-9);
    }

    #[test]
    fn steps_are_adjacent_and_free() {
        let g = grid(10, 10, &[(5, 0), (5, 1), (5, 2), (5, 3), (5, 4), (5, 5), (5, 6), (5, 7)]);
        let p = a_star(&g, (0, 0), (9, 0));
        assert!(!p.is_empty());
        for w in p.windows(2) {
            assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
            assert!(w[0] != w[1]);
        }
        assert!(p.iter().all(|c| !g.is_occupied(c.0, c.1)));
    }
}
