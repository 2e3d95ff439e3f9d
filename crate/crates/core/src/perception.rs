//! From hazard labels and a depth frame to anxiety-scored grid cells.
//!
//! The pipeline is `segment_hazards` (pixel masks per hazard label),
//! `masks_to_points` (pinhole back-projection into the world frame) and
//! `points_to_anxiety_cells` (gated, min-support projection onto the grid).
//! The same depth frame also drives the obstacle layer and the visible region
//! used for hazard persistence.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmap::Anxiety;
use crate::grid::{Cell, Grid, GridSpec};
use crate::hazard::SceneImage;

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Radians, normalized to `(-pi, pi]`.
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// `self ∘ child`: the child pose expressed in this pose's parent frame.
    pub fn compose(&self, child: &Pose2D) -> Pose2D {
        let [x, y] = self.transform_point([child.x, child.y]);
        Pose2D::new(x, y, self.heading + child.heading)
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.x - p[0]).hypot(self.y - p[1])
    }
}

/// Calibrated pinhole camera rigidly mounted on the robot.
///
/// Optical frame convention: x right, y down, z forward. The mount pose is
/// the camera's planar pose in the robot body frame; `mount_height` is its
/// height above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
    #[serde(default)]
    pub mount: Pose2D,
    #[serde(default)]
    pub mount_height: f64,
}

impl CameraModel {
    /// Symmetric camera with a horizontal field of view in radians.
    pub fn with_fov(width: usize, height: usize, hfov: f64, max_range: f64) -> Self {
        let fx = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            max_range,
            mount: Pose2D::default(),
            mount_height: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err("image must be non-empty".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err("principal point must lie inside the image".into());
        }
        if !(self.max_range > 0.0) {
            return Err("max_range must be positive".into());
        }
        Ok(())
    }

    /// Unit ray through pixel `(u, v)` in the optical frame.
    pub fn ray(&self, u: usize, v: usize) -> [f64; 3] {
        let x = (u as f64 - self.cx) / self.fx;
        let y = (v as f64 - self.cy) / self.fy;
        let n = (x * x + y * y + 1.0).sqrt();
        [x / n, y / n, 1.0 / n]
    }

    /// Planar bearing of column `u` relative to the camera heading (left positive).
    pub fn column_bearing(&self, u: usize) -> f64 {
        (-(u as f64 - self.cx) / self.fx).atan()
    }

    /// World pose of the camera for a given robot pose.
    pub fn world_pose(&self, robot: &Pose2D) -> Pose2D {
        robot.compose(&self.mount)
    }
}

/// Per-pixel range (meters along the pixel ray). Non-finite or non-positive
/// entries are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub ranges: Vec<f64>,
}

impl DepthImage {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ranges: vec![f64::NAN; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let r = *self.ranges.get(v * self.width + u)?;
        (r.is_finite() && r > 0.0).then_some(r)
    }

    pub fn set(&mut self, u: usize, v: usize, range: Option<f64>) {
        self.ranges[v * self.width + u] = range.unwrap_or(f64::NAN);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardMask {
    pub label: String,
    pub anxiety: Anxiety,
    pub pixels: Vec<bool>,
}

impl HazardMask {
    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMaskSet {
    pub width: usize,
    pub height: usize,
    pub masks: Vec<HazardMask>,
}

/// Which semantic labels make up each hazard name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HazardVocabulary(pub BTreeMap<String, Vec<String>>);

impl HazardVocabulary {
    pub fn insert(&mut self, hazard: impl Into<String>, labels: Vec<String>) {
        self.0.insert(hazard.into(), labels);
    }

    /// Semantic labels for a hazard name; unknown names match themselves.
    pub fn labels_for<'a>(&'a self, hazard: &'a str) -> Vec<&'a str> {
        match self.0.get(hazard) {
            Some(ls) => ls.iter().map(String::as_str).collect(),
            None => vec![hazard],
        }
    }
}

pub trait Segmenter {
    fn segment(&self, image: &SceneImage, hazards: &[(String, Anxiety)]) -> SegmentationMaskSet;
}

/// Segmenter reading the simulator's per-pixel semantic channel.
#[derive(Debug, Clone, Default)]
pub struct OracleSegmenter {
    pub vocabulary: HazardVocabulary,
}

impl OracleSegmenter {
    pub fn new(vocabulary: HazardVocabulary) -> Self {
        Self { vocabulary }
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, image: &SceneImage, hazards: &[(String, Anxiety)]) -> SegmentationMaskSet {
        let n = image.width * image.height;
        let masks = hazards
            .iter()
            .map(|(label, anxiety)| {
                let pixels = match &image.semantic {
                    Some(ids) => {
                        let wanted: Vec<u16> = self
                            .vocabulary
                            .labels_for(label)
                            .into_iter()
                            .filter_map(|name| image.label_id(name))
                            .collect();
                        ids.iter().map(|id| wanted.contains(id)).collect()
                    }
                    None => vec![false; n],
                };
                HazardMask {
                    label: label.clone(),
                    anxiety: *anxiety,
                    pixels,
                }
            })
            .collect();
        SegmentationMaskSet {
            width: image.width,
            height: image.height,
            masks,
        }
    }
}

pub fn segment_hazards(
    segmenter: &dyn Segmenter,
    image: &SceneImage,
    hazards: &[(String, Anxiety)],
) -> SegmentationMaskSet {
    segmenter.segment(image, hazards)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardPoint {
    /// World-frame position (x, y, z).
    pub world: [f64; 3],
    pub anxiety: Anxiety,
    /// Range from the camera along the pixel ray.
    pub range: f64,
}

/// Back-project one pixel with known range into the world frame.
pub fn back_project(camera: &CameraModel, robot: &Pose2D, u: usize, v: usize, range: f64) -> [f64; 3] {
    let [rx, ry, rz] = camera.ray(u, v);
    // optical -> camera body: forward = z, left = -x, up = -y
    let forward = rz * range;
    let left = -rx * range;
    let up = -ry * range;
    let [x, y] = camera.world_pose(robot).transform_point([forward, left]);
    [x, y, camera.mount_height + up]
}

pub fn masks_to_points(
    masks: &SegmentationMaskSet,
    depth: &DepthImage,
    camera: &CameraModel,
    robot_pose: &Pose2D,
) -> Vec<HazardPoint> {
    let mut points = Vec::new();
    if depth.width != masks.width || depth.height != masks.height {
        return points;
    }
    for mask in &masks.masks {
        for (i, _) in mask.pixels.iter().enumerate().filter(|(_, &on)| on) {
            let (u, v) = (i % masks.width, i / masks.width);
            let Some(range) = depth.get(u, v) else {
                continue;
            };
            if range > camera.max_range {
                continue;
            }
            points.push(HazardPoint {
                world: back_project(camera, robot_pose, u, v, range),
                anxiety: mask.anxiety,
                range,
            });
        }
    }
    points
}

/// Noise gates applied before hazard points reach the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionFilter {
    /// Minimum number of points a cell needs to be kept.
    pub min_support: usize,
    /// Points farther than this (meters) are dropped.
    pub max_range: f64,
}

impl Default for ProjectionFilter {
    fn default() -> Self {
        Self {
            min_support: 3,
            max_range: f64::INFINITY,
        }
    }
}

/// Grid cells hit by hazard points, each with the max anxiety of its points.
/// Output is sorted by cell.
pub fn points_to_anxiety_cells(
    points: &[HazardPoint],
    spec: &GridSpec,
    filter: &ProjectionFilter,
) -> Vec<(Cell, Anxiety)> {
    let mut bins: BTreeMap<Cell, (usize, Anxiety)> = BTreeMap::new();
    for p in points {
        if !(p.range <= filter.max_range) {
            continue;
        }
        let Some(cell) = spec.grid_of([p.world[0], p.world[1]]) else {
            continue;
        };
        let e = bins.entry(cell).or_insert((0, Anxiety::NONE));
        e.0 += 1;
        e.1 = e.1.max(p.anxiety);
    }
    bins.into_iter()
        .filter(|(_, (n, a))| *n >= filter.min_support && a.is_hazard())
        .map(|(c, (_, a))| (c, a))
        .collect()
}

/// Cells the camera swept this frame, from the camera to each ray's end
/// point (its return, or `max_range` when invalid).
pub fn visible_region(depth: &DepthImage, camera: &CameraModel, robot: &Pose2D, spec: &GridSpec) -> Grid<bool> {
    let mut vis = Grid::filled(*spec, false);
    let cam = camera.world_pose(robot);
    for u in 0..depth.width {
        for v in 0..depth.height {
            let [rx, ry, rz] = camera.ray(u, v);
            let horizontal = (rx * rx + rz * rz).sqrt() / (rx * rx + ry * ry + rz * rz).sqrt();
            let range = depth.get(u, v).unwrap_or(camera.max_range).min(camera.max_range);
            let reach = range * horizontal;
            let bearing = camera.column_bearing(u);
            walk_ray(spec, &cam, bearing, reach, |c, _| *vis.at_mut(c) = true);
        }
    }
    vis
}

/// Free and occupied cells implied by one depth frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObstacleObservation {
    pub hits: Vec<Cell>,
    pub free: Vec<Cell>,
}

/// Ray-trace a depth frame into obstacle hits and cleared cells. Clearing
/// stops `clear_margin` meters short of each return.
pub fn observe_obstacles(
    depth: &DepthImage,
    camera: &CameraModel,
    robot: &Pose2D,
    spec: &GridSpec,
    clear_margin: f64,
) -> ObstacleObservation {
    let cam = camera.world_pose(robot);
    let mut obs = ObstacleObservation::default();
    let mut free = Grid::filled(*spec, false);
    for u in 0..depth.width {
        for v in 0..depth.height {
            let [rx, ry, rz] = camera.ray(u, v);
            let horizontal = (rx * rx + rz * rz).sqrt() / (rx * rx + ry * ry + rz * rz).sqrt();
            let bearing = camera.column_bearing(u);
            match depth.get(u, v).filter(|&r| r <= camera.max_range) {
                Some(range) => {
                    let reach = range * horizontal;
                    walk_ray(spec, &cam, bearing, (reach - clear_margin).max(0.0), |c, _| *free.at_mut(c) = true);
                    let [x, y] = cam.transform_point([reach * bearing.cos(), reach * bearing.sin()]);
                    if let Some(c) = spec.grid_of([x, y]) {
                        obs.hits.push(c);
                    }
                }
                None => {
                    walk_ray(spec, &cam, bearing, camera.max_range - clear_margin, |c, _| *free.at_mut(c) = true);
                }
            }
        }
    }
    obs.hits.sort_unstable();
    obs.hits.dedup();
    obs.free = free.iter().filter(|(_, &f)| f).map(|(c, _)| c).collect();
    obs
}

/// Visit in-bounds cells along a planar ray at quarter-cell steps.
fn walk_ray(spec: &GridSpec, origin: &Pose2D, bearing: f64, length: f64, mut visit: impl FnMut(Cell, f64)) {
    let step = spec.resolution * 0.25;
    let (s, c) = (origin.heading + bearing).sin_cos();
    let mut last = None;
    let n = (length / step).floor() as usize;
    for i in 0..=n {
        let t = (i as f64 * step).min(length);
        if let Some(cell) = spec.grid_of([origin.x + t * c, origin.y + t * s]) {
            if last != Some(cell) {
                visit(cell, t);
                last = Some(cell);
            }
        }
    }
}

/// Debug dump of hazard points as `x,y,z,anxiety,range`.
pub fn write_points_csv(points: &[HazardPoint], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x,y,z,anxiety,range")?;
    for p in points {
        writeln!(
            f,
            "{:.6},{:.6},{:.6},{},{:.6}",
            p.world[0],
            p.world[1],
            p.world[2],
            p.anxiety.get(),
            p.range
        )?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn camera() -> CameraModel {
        CameraModel::with_fov(9, 1, FRAC_PI_2, 5.0)
    }

    fn image(labels: &[&str], ids: Vec<u16>) -> SceneImage {
        SceneImage::with_semantics(0.0, ids.len(), 1, labels.iter().map(|s| s.to_string()).collect(), ids)
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-FRAC_PI_2), -FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn camera_validation() {
        assert!(camera().validate().is_ok());
        let mut bad = camera();
        bad.cx = 20.0;
        assert!(bad.validate().is_err());
        bad = camera();
        bad.fx = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oracle_mask_matches_semantic_channel() {
        let img = image(&["floor", "wall", "door(closed)"], vec![1, 2, 2, 0, 1, 2, 0, 0, 1]);
        let mut vocab = HazardVocabulary::default();
        vocab.insert("closed door", vec!["door(closed)".into()]);
        let seg = OracleSegmenter::new(vocab);
        let set = seg.segment(&img, &[("closed door".into(), Anxiety::HIGH)]);
        assert_eq!(set.masks.len(), 1);
        let expect: Vec<bool> = img.semantic.as_ref().unwrap().iter().map(|&i| i == 2).collect();
        assert_eq!(set.masks[0].pixels, expect);

        let none = image(&["floor", "wall"], vec![1, 1, 0]);
        let set = seg.segment(&none, &[("closed door".into(), Anxiety::HIGH)]);
        assert_eq!(set.masks[0].count(), 0);
    }

    #[test]
    fn two_hazards_give_disjoint_masks() {
        let labels = ["floor", "chair", "person(seated)", "door(closed)"];
        let ids = vec![0, 1, 2, 2, 3, 3, 0, 1, 3];
        let img = image(&labels, ids.clone());
        let mut vocab = HazardVocabulary::default();
        vocab.insert("seated chair", vec!["chair".into(), "person(seated)".into()]);
        vocab.insert("closed door", vec!["door(closed)".into()]);
        let set = OracleSegmenter::new(vocab).segment(
            &img,
            &[("seated chair".into(), Anxiety::HIGH), ("closed door".into(), Anxiety::MEDIUM)],
        );
        // per-pixel label scan
        for (i, &id) in ids.iter().enumerate() {
            assert_eq!(set.masks[0].pixels[i], id == 1 || id == 2);
            assert_eq!(set.masks[1].pixels[i], id == 3);
            assert!(!(set.masks[0].pixels[i] && set.masks[1].pixels[i]));
        }
    }

    fn single_pixel_mask(cam: &CameraModel, u: usize) -> SegmentationMaskSet {
        let mut pixels = vec![false; cam.width * cam.height];
        pixels[u] = true;
        SegmentationMaskSet {
            width: cam.width,
            height: cam.height,
            masks: vec![HazardMask {
                label: "x".into(),
                anxiety: Anxiety::HIGH,
                pixels,
            }],
        }
    }

    #[test]
    fn principal_point_projects_straight_ahead() {
        let cam = camera();
        let masks = single_pixel_mask(&cam, 4);
        let mut depth = DepthImage::invalid(9, 1);
        depth.set(4, 0, Some(2.5));
        let pts = masks_to_points(&masks, &depth, &cam, &Pose2D::default());
        assert_eq!(pts.len(), 1);
        assert_abs_diff_eq!(pts[0].world[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[0].world[1], 0.0, epsilon = 1e-12);

        // Mount offset shifts the point forward.
        let mut mounted = cam;
        mounted.mount = Pose2D::new(0.2, 0.0, 0.0);
        let pts = masks_to_points(&masks, &depth, &mounted, &Pose2D::default());
        assert_abs_diff_eq!(pts[0].world[0], 2.7, epsilon = 1e-12);
    }

    #[test]
    fn invalid_depth_yields_no_points() {
        let cam = camera();
        let masks = single_pixel_mask(&cam, 4);
        let depth = DepthImage::invalid(9, 1);
        assert!(masks_to_points(&masks, &depth, &cam, &Pose2D::default()).is_empty());
    }

    #[test]
    fn rotated_robot_rotates_point() {
        let cam = camera();
        let masks = single_pixel_mask(&cam, 1);
        let mut depth = DepthImage::invalid(9, 1);
        depth.set(1, 0, Some(3.0));
        let base = masks_to_points(&masks, &depth, &cam, &Pose2D::new(1.0, 2.0, 0.0))[0].world;
        let rot = masks_to_points(&masks, &depth, &cam, &Pose2D::new(1.0, 2.0, FRAC_PI_2))[0].world;
        // analytic: rotate (base - robot) by +90 degrees
        let (dx, dy) = (base[0] - 1.0, base[1] - 2.0);
        assert_abs_diff_eq!(rot[0], 1.0 - dy, epsilon = 1e-12);
        assert_abs_diff_eq!(rot[1], 2.0 + dx, epsilon = 1e-12);
        // pixel u=1 is left of center, so the point lies to the left (+y)
        assert!(base[1] > 2.0);
    }

    fn pt(x: f64, y: f64, a: Anxiety) -> HazardPoint {
        HazardPoint {
            world: [x, y, 0.0],
            anxiety: a,
            range: 1.0,
        }
    }

    #[test]
    fn projection_aggregates_and_thresholds() {
        let spec = GridSpec::new(10, 10, 0.1, [0.0, 0.0]).unwrap();
        let f = ProjectionFilter::default();
        let five: Vec<_> = (0..5).map(|i| pt(0.5 + 0.01 * i as f64, 0.5, Anxiety::HIGH)).collect();
        assert_eq!(points_to_anxiety_cells(&five, &spec, &f), vec![(Cell::new(5, 5), Anxiety::HIGH)]);
        assert!(points_to_anxiety_cells(&five[..2], &spec, &f).is_empty());

        let mixed = [pt(0.5, 0.5, Anxiety::LOW), pt(0.51, 0.5, Anxiety::HIGH), pt(0.49, 0.5, Anxiety::LOW)];
        let mut rev = mixed;
        rev.reverse();
        for order in [&mixed[..], &rev[..]] {
            assert_eq!(points_to_anxiety_cells(order, &spec, &f), vec![(Cell::new(5, 5), Anxiety::HIGH)]);
        }

        let outside = [pt(5.0, 5.0, Anxiety::HIGH); 4];
        assert!(points_to_anxiety_cells(&outside, &spec, &f).is_empty());
        let far = ProjectionFilter { min_support: 1, max_range: 0.5 };
        assert!(points_to_anxiety_cells(&five, &spec, &far).is_empty());
    }

    #[test]
    fn empty_inputs_stay_empty() {
        let spec = GridSpec::new(4, 4, 0.1, [0.0, 0.0]).unwrap();
        assert!(points_to_anxiety_cells(&[], &spec, &ProjectionFilter::default()).is_empty());
        let cam = camera();
        let set = SegmentationMaskSet { width: 9, height: 1, masks: vec![] };
        assert!(masks_to_points(&set, &DepthImage::invalid(9, 1), &cam, &Pose2D::default()).is_empty());
    }

    #[test]
    fn obstacle_observation_marks_hit_and_clears_before_it() {
        let spec = GridSpec::new(20, 40, 0.1, [0.0, -1.0]).unwrap();
        let cam = CameraModel::with_fov(1, 1, 0.1, 3.0);
        let mut depth = DepthImage::invalid(1, 1);
        depth.set(0, 0, Some(2.0));
        let robot = Pose2D::new(0.5, 0.0, 0.0);
        let obs = observe_obstacles(&depth, &cam, &robot, &spec, 0.15);
        assert_eq!(obs.hits, vec![spec.grid_of([2.5, 0.0]).unwrap()]);
        assert!(obs.free.contains(&spec.grid_of([1.0, 0.0]).unwrap()));
        assert!(!obs.free.contains(&spec.grid_of([2.5, 0.0]).unwrap()));
        let vis = visible_region(&depth, &cam, &robot, &spec);
        assert!(*vis.at(spec.grid_of([2.5, 0.0]).unwrap()));
        assert!(!*vis.at(spec.grid_of([2.7, 0.0]).unwrap()));
    }

    proptest! {
        #[test]
        fn back_projection_commutes_with_rigid_motion(
            x in -5.0f64..5.0, y in -5.0f64..5.0, th in -3.1f64..3.1,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tth in -3.1f64..3.1,
            u in 0usize..9, range in 0.1f64..5.0,
        ) {
            let cam = camera();
            let robot = Pose2D::new(x, y, th);
            let motion = Pose2D::new(tx, ty, tth);
            let p = back_project(&cam, &robot, u, 0, range);
            let moved = motion.transform_point([p[0], p[1]]);
            let q = back_project(&cam, &motion.compose(&robot), u, 0, range);
            prop_assert!((moved[0] - q[0]).abs() < 1e-9 && (moved[1] - q[1]).abs() < 1e-9);
        }
    }
}
