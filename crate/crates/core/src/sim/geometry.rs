//! Planar polygon helpers: ray casting, disc overlap, rasterization.

use crate::grid::{Cell, GridSpec};
use crate::perception::Pose2D;

pub type Point = [f64; 2];

/// Simple polygon, vertices in order (either winding).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    /// Axis-aligned rectangle from two corners.
    pub fn rect(min: Point, max: Point) -> Self {
        Self::new(vec![min, [max[0], min[1]], max, [min[0], max[1]]])
    }

    pub fn transformed(&self, pose: &Pose2D) -> Self {
        Self::new(self.vertices.iter().map(|&p| pose.transform_point(p)).collect())
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        self.edges().map(|(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }

    /// Whether a disc of radius `r` at `center` touches the polygon.
    pub fn intersects_disc(&self, center: Point, r: f64) -> bool {
        self.contains(center) || self.distance_to(center) < r
    }

    /// Nearest hit along a ray, as distance from `origin`.
    pub fn ray_hit(&self, origin: Point, dir: Point) -> Option<f64> {
        self.edges()
            .filter_map(|(a, b)| ray_segment(origin, dir, a, b))
            .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len().max(1) as f64;
        let s = self.vertices.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        [s[0] / n, s[1] / n]
    }

    /// Grid cells covered by the polygon: cells whose center lies inside,
    /// plus every cell an edge passes through. Sorted.
    pub fn rasterize(&self, spec: &GridSpec) -> Vec<Cell> {
        let mut out = Vec::new();
        let (lo, hi) = self.bounds();
        let c0 = spec.grid_coords(lo);
        let c1 = spec.grid_coords(hi);
        let (r0, r1) = (c0[0].floor().max(0.0) as usize, (c1[0].ceil().max(0.0) as usize).min(spec.rows.saturating_sub(1)));
        let (k0, k1) = (c0[1].floor().max(0.0) as usize, (c1[1].ceil().max(0.0) as usize).min(spec.cols.saturating_sub(1)));
        for row in r0..=r1 {
            for col in k0..=k1 {
                let cell = Cell::new(row, col);
                if spec.contains(cell) && self.contains(spec.world_of(cell)) {
                    out.push(cell);
                }
            }
        }
        let step = spec.resolution * 0.25;
        for (a, b) in self.edges() {
            let len = dist(a, b);
            let n = (len / step).ceil().max(1.0) as usize;
            for i in 0..=n {
                let t = i as f64 / n as f64;
                if let Some(c) = spec.grid_of([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]) {
                    out.push(c);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Distance `t >= 0` along unit ray `origin + t·dir` to segment `ab`.
pub fn ray_segment(origin: Point, dir: Point, a: Point, b: Point) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = cross(dir, e);
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = [a[0] - origin[0], a[1] - origin[1]];
    let t = cross(w, e) / denom;
    let s = cross(w, dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ray_hits_square_front_face() {
        let sq = Polygon::rect([2.0, -0.5], [3.0, 0.5]);
        assert_abs_diff_eq!(sq.ray_hit([0.0, 0.0], [1.0, 0.0]).unwrap(), 2.0, epsilon = 1e-12);
        assert!(sq.ray_hit([0.0, 0.0], [-1.0, 0.0]).is_none());
        let d = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(sq.ray_hit([2.5, -1.5], [0.0, 1.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert!(sq.ray_hit([0.0, 0.0], [d, d]).is_none());
    }

    #[test]
    fn disc_overlap() {
        let sq = Polygon::rect([0.0, 0.0], [1.0, 1.0]);
        assert!(sq.intersects_disc([0.5, 0.5], 0.1));
        assert!(sq.intersects_disc([1.2, 0.5], 0.25));
        assert!(!sq.intersects_disc([1.3, 0.5], 0.25));
    }

    #[test]
    fn rasterize_rect() {
        let spec = GridSpec::new(20, 20, 0.1, [0.0, 0.0]).unwrap();
        let cells = Polygon::rect([0.45, 0.45], [0.75, 0.65]).rasterize(&spec);
        // rows 5..=6 (y 0.5, 0.6) and cols 5..=7 (x 0.5..0.7) have centers inside
        for r in 5..=6 {
            for c in 5..=7 {
                assert!(cells.contains(&Cell::new(r, c)));
            }
        }
        assert!(cells.iter().all(|c| (4..=7).contains(&c.row) && (4..=8).contains(&c.col)));
    }
}
