//! Minimal SVG snapshots of worlds, local maps and trajectories.

use crate::dynamics::Trajectory;
use crate::env::{LocalPerception, PolygonEnvironment};
use crate::geom::Point;
use std::fmt::Write;

/// Drawing in world coordinates (y up) over a fixed rectangle.
pub struct SvgCanvas {
    min: Point,
    max: Point,
    scale: f64,
    body: String,
}

impl SvgCanvas {
    pub fn new(min: Point, max: Point, pixels_per_meter: f64) -> Self {
        Self {
            min,
            max,
            scale: pixels_per_meter,
            body: String::new(),
        }
    }

    fn px(&self, p: Point) -> (f64, f64) {
        ((p.x - self.min.x) * self.scale, (self.max.y - p.y) * self.scale)
    }

    pub fn polygon(&mut self, pts: &[Point], fill: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(self.body, r#"<polygon points="{}" fill="{fill}"/>"#, coords.join(" "));
    }

    pub fn polyline(&mut self, pts: &[Point], stroke: &str, width: f64, opacity: f64) {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
            coords.join(" ")
        );
    }

    pub fn circle(&mut self, c: Point, r: f64, fill: &str) {
        let (x, y) = self.px(c);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="{fill}"/>"#,
            r * self.scale
        );
    }

    pub fn rect(&mut self, min: Point, size: f64, fill: &str) {
        let (x, y) = self.px(Point::new(min.x, min.y + size));
        let s = size * self.scale;
        let _ = writeln!(self.body, r#"<rect x="{x:.2}" y="{y:.2}" width="{s:.2}" height="{s:.2}" fill="{fill}"/>"#);
    }

    pub fn finish(self) -> String {
        let w = (self.max.x - self.min.x) * self.scale;
        let h = (self.max.y - self.min.y) * self.scale;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

pub fn world_canvas(env: &PolygonEnvironment) -> SvgCanvas {
    let mut c = SvgCanvas::new(env.bounds.min, env.bounds.max, 60.0);
    for o in &env.obstacles {
        c.polygon(&o.vertices, "#555");
    }
    c
}

/// Occupied local-map cells in the robot frame.
pub fn local_canvas(map: &LocalPerception) -> SvgCanvas {
    let g = map.geometry();
    let mut c = SvgCanvas::new(g.origin, g.max_corner(), 80.0);
    for (ix, iy, _) in g.centers() {
        if map.costmap.is_occupied(ix, iy) {
            let min = Point::new(
                g.origin.x + ix as f64 * g.resolution,
                g.origin.y + iy as f64 * g.resolution,
            );
            c.rect(min, g.resolution, "#555");
        }
    }
    c
}

pub fn trajectories(c: &mut SvgCanvas, trajs: &[Trajectory], stroke: &str, opacity: f64) {
    for t in trajs {
        let pts: Vec<Point> = t.states.iter().map(|s| s.position()).collect();
        c.polyline(&pts, stroke, 1.0, opacity);
    }
}
