use super::PolygonEnvironment;
use crate::geom::Point;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Placement of a regular grid: cell `(ix, iy)` covers
/// `[origin.x + ix*res, origin.x + (ix+1)*res) x [origin.y + iy*res, ...)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin: Point,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(origin: Point, resolution: f64, width: usize, height: usize) -> Self {
        assert!(resolution > 0.0, "grid resolution must be positive");
        Self {
            origin,
            resolution,
            width,
            height,
        }
    }

    /// Square grid of side `side` meters centered on the origin.
    pub fn centered(side: f64, resolution: f64) -> Self {
        let n = (side / resolution).round().max(1.0) as usize;
        let half = n as f64 * resolution / 2.0;
        Self::new(Point::new(-half, -half), resolution, n, n)
    }

    /// Grid covering a world rectangle.
    pub fn covering(min: Point, max: Point, resolution: f64) -> Self {
        let w = ((max.x - min.x) / resolution).ceil().max(1.0) as usize;
        let h = ((max.y - min.y) / resolution).ceil().max(1.0) as usize;
        Self::new(min, resolution, w, h)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn center(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn max_corner(&self) -> Point {
        Point::new(
            self.origin.x + self.width as f64 * self.resolution,
            self.origin.y + self.height as f64 * self.resolution,
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        let m = self.max_corner();
        p.x >= self.origin.x && p.y >= self.origin.y && p.x <= m.x && p.y <= m.y
    }

    /// Half the grid diagonal; the SDF value used when nothing is occupied.
    pub fn sentinel(&self) -> f64 {
        0.5 * (self.width as f64 * self.resolution).hypot(self.height as f64 * self.resolution)
    }

    pub fn centers(&self) -> impl Iterator<Item = (usize, usize, Point)> + '_ {
        (0..self.height).flat_map(move |iy| (0..self.width).map(move |ix| (ix, iy, self.center(ix, iy))))
    }
}

/// Occupancy in `[0, 1]`, row-major (`y` major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), geometry.len());
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { geometry, values }
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        Self::new(geometry, vec![0.0; geometry.len()])
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.geometry.index(ix, iy)]
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.get(ix, iy) >= 0.5
    }

    /// Occupancy of the cell containing `p`; outside the grid counts as fully occupied.
    pub fn value_at(&self, p: Point) -> f64 {
        match self.geometry.cell_of(p) {
            Some((ix, iy)) => self.get(ix, iy),
            None => 1.0,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_rows(&self.geometry, &self.values, out)
    }
}

/// Signed distance in meters, negative inside obstacles; same layout as [`OccupancyGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), geometry.len());
        Self { geometry, values }
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.geometry.index(ix, iy)]
    }

    /// Bilinear interpolation between cell centers, clamped at the border
    /// half-cells. `None` outside the grid rectangle.
    pub fn interpolate(&self, p: Point) -> Option<f64> {
        let g = &self.geometry;
        if !g.contains(p) || g.is_empty() {
            return None;
        }
        let fx = ((p.x - g.origin.x) / g.resolution - 0.5).clamp(0.0, (g.width - 1) as f64);
        let fy = ((p.y - g.origin.y) / g.resolution - 0.5).clamp(0.0, (g.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(g.width - 1);
        let y1 = (y0 + 1).min(g.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        Some(top * (1.0 - ty) + bottom * ty)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_rows(&self.geometry, &self.values, out)
    }
}

fn write_rows<W: Write>(g: &GridGeometry, values: &[f64], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in values.chunks(g.width.max(1)) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Cell value 1 iff its center lies inside an obstacle.
pub fn rasterize(env: &PolygonEnvironment, geometry: &GridGeometry) -> OccupancyGrid {
    let values = geometry
        .centers()
        .map(|(_, _, c)| if env.in_obstacle(c) { 1.0 } else { 0.0 })
        .collect();
    OccupancyGrid::new(*geometry, values)
}

/// Exact signed distance sampled at every cell center. Empty worlds get the
/// grid sentinel instead of infinity.
pub fn build_sdf_grid(env: &PolygonEnvironment, geometry: &GridGeometry) -> SdfGrid {
    let sentinel = geometry.sentinel();
    let values = geometry
        .centers()
        .map(|(_, _, c)| {
            let d = env.signed_distance(c);
            if d.is_finite() {
                d
            } else {
                sentinel
            }
        })
        .collect();
    SdfGrid::new(*geometry, values)
}

/// Squared-distance transform of a 1-D sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            if f[p].is_infinite() {
                // An infinite seed never wins; replace it.
                v[k] = q;
                z[k + 1] = f64::INFINITY;
                break;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Squared Euclidean distance (in cells) from every cell to the nearest seed cell.
/// Exact; separable column pass followed by a row pass.
pub(crate) fn squared_edt(width: usize, height: usize, seeds: &[bool]) -> Vec<f64> {
    let n = width.max(height);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    let mut grid = vec![f64::INFINITY; width * height];
    for ix in 0..width {
        for iy in 0..height {
            col[iy] = if seeds[iy * width + ix] { 0.0 } else { f64::INFINITY };
        }
        edt_1d(&col, &mut col_out, &mut v, &mut z);
        for iy in 0..height {
            grid[iy * width + ix] = col_out[iy];
        }
    }
    let mut row_out = vec![0.0; width];
    for iy in 0..height {
        let row = &grid[iy * width..(iy + 1) * width];
        edt_1d(row, &mut row_out, &mut v, &mut z);
        grid[iy * width..(iy + 1) * width].copy_from_slice(&row_out);
    }
    grid
}

/// SDF of an occupancy grid. Free cells get the center distance to the nearest
/// occupied cell minus half a cell; occupied cells get the negated distance to
/// the nearest free cell minus half a cell. All-free grids get the sentinel.
pub fn sdf_from_occupancy(grid: &OccupancyGrid) -> SdfGrid {
    let g = grid.geometry;
    let occupied: Vec<bool> = grid.values.iter().map(|v| *v >= 0.5).collect();
    let free: Vec<bool> = occupied.iter().map(|o| !o).collect();
    let any_occ = occupied.iter().any(|o| *o);
    let any_free = free.iter().any(|f| *f);
    let sentinel = g.sentinel();
    let half = 0.5 * g.resolution;
    let to_occ = if any_occ { Some(squared_edt(g.width, g.height, &occupied)) } else { None };
    let to_free = if any_free { Some(squared_edt(g.width, g.height, &free)) } else { None };
    let values = (0..g.len())
        .map(|i| {
            if occupied[i] {
                match &to_free {
                    Some(d) => -(d[i].sqrt() * g.resolution - half),
                    None => -sentinel,
                }
            } else {
                match &to_occ {
                    Some(d) => d[i].sqrt() * g.resolution - half,
                    None => sentinel,
                }
            }
        })
        .collect();
    SdfGrid::new(g, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Bounds, Polygon};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(x0: f64, y0: f64, s: f64) -> Polygon {
        Polygon::new(vec![
            Point::new(x0, y0),
            Point::new(x0 + s, y0),
            Point::new(x0 + s, y0 + s),
            Point::new(x0, y0 + s),
        ])
    }

    fn bounds() -> Bounds {
        Bounds::new(Point::new(0.0, 0.0), Point::new(4.0, 4.0))
    }

    #[test]
    fn rasterize_empty_is_zero() {
        let env = PolygonEnvironment::empty(bounds());
        let g = GridGeometry::covering(bounds().min, bounds().max, 0.1);
        assert!(rasterize(&env, &g).values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rasterize_half_plane() {
        let env = PolygonEnvironment::new(
            bounds(),
            vec![Polygon::new(vec![
                Point::new(0.0, 0.0),
                Point::new(2.0, 0.0),
                Point::new(2.0, 4.0),
                Point::new(0.0, 4.0),
            ])],
        );
        let g = GridGeometry::covering(bounds().min, bounds().max, 0.5);
        let occ = rasterize(&env, &g);
        for (ix, iy, _) in g.centers() {
            assert_eq!(occ.get(ix, iy), if ix < 4 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn sdf_grid_empty_is_sentinel() {
        let env = PolygonEnvironment::empty(bounds());
        let g = GridGeometry::covering(bounds().min, bounds().max, 0.25);
        let sdf = build_sdf_grid(&env, &g);
        assert!(sdf.values.iter().all(|v| *v == g.sentinel()));
    }

    #[test]
    fn sdf_grid_adjacent_to_edge() {
        let env = PolygonEnvironment::new(bounds(), vec![square(1.0, 1.0, 2.0)]);
        let g = GridGeometry::covering(bounds().min, bounds().max, 0.1);
        let sdf = build_sdf_grid(&env, &g);
        // Cell just right of x = 3 edge, at mid height.
        let v = sdf.get(30, 20);
        assert!((v - 0.05).abs() <= 0.05 + 1e-12);
        assert!(sdf.get(20, 20) < 0.0);
    }

    #[test]
    fn rasterize_and_sdf_agree() {
        let env = PolygonEnvironment::new(bounds(), vec![square(0.7, 0.9, 1.3), square(2.4, 2.2, 1.0)]);
        let g = GridGeometry::covering(bounds().min, bounds().max, 0.05);
        let occ = rasterize(&env, &g);
        let sdf = build_sdf_grid(&env, &g);
        for i in 0..g.len() {
            if sdf.values[i].abs() < g.resolution {
                continue;
            }
            assert_eq!(occ.values[i] == 1.0, sdf.values[i] <= 0.0);
        }
    }

    #[test]
    fn bilinear_interpolation_reproduces_linear_field() {
        let g = GridGeometry::new(Point::new(0.0, 0.0), 0.5, 6, 4);
        let values = g.centers().map(|(_, _, c)| 2.0 * c.x - c.y).collect();
        let sdf = SdfGrid::new(g, values);
        let p = Point::new(1.13, 0.77);
        assert!((sdf.interpolate(p).unwrap() - (2.0 * p.x - p.y)).abs() < 1e-12);
        assert!(sdf.interpolate(Point::new(-0.1, 0.5)).is_none());
    }

    fn brute_sq_dist(w: usize, h: usize, seeds: &[bool]) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; w * h];
        for y in 0..h {
            for x in 0..w {
                for sy in 0..h {
                    for sx in 0..w {
                        if seeds[sy * w + sx] {
                            let dx = x as f64 - sx as f64;
                            let dy = y as f64 - sy as f64;
                            out[y * w + x] = out[y * w + x].min(dx * dx + dy * dy);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let w = rng.random_range(1..17);
            let h = rng.random_range(1..17);
            let density = if trial % 3 == 0 { 0.02 } else { 0.2 };
            let seeds: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
            if !seeds.iter().any(|s| *s) {
                continue;
            }
            assert_eq!(squared_edt(w, h, &seeds), brute_sq_dist(w, h, &seeds));
        }
    }

    #[test]
    fn sdf_from_occupancy_is_lipschitz() {
        let env = PolygonEnvironment::new(bounds(), vec![square(0.7, 0.9, 1.3), square(2.4, 2.2, 1.0)]);
        let g = GridGeometry::covering(bounds().min, bounds().max, 0.1);
        let sdf = sdf_from_occupancy(&rasterize(&env, &g));
        let lim = g.resolution * 2f64.sqrt() + 1e-12;
        for iy in 0..g.height {
            for ix in 0..g.width {
                if ix + 1 < g.width {
                    assert!((sdf.get(ix, iy) - sdf.get(ix + 1, iy)).abs() <= lim);
                }
                if iy + 1 < g.height {
                    assert!((sdf.get(ix, iy) - sdf.get(ix, iy + 1)).abs() <= lim);
                }
            }
        }
    }

    #[test]
    fn csv_is_row_major() {
        let g = GridGeometry::new(Point::new(0.0, 0.0), 1.0, 3, 2);
        let grid = OccupancyGrid::new(g, vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,1,0\n1,1,0\n");
    }
}
