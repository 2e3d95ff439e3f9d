//! Scenario files: world geometry, robot, camera and scripted events.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::{Point, Polygon};
use super::SimError;
use crate::controller::RobotLimits;
use crate::grid::GridSpec;
use crate::perception::{CameraModel, Pose2D};

const BUILTIN: &[(&str, &str)] = &[
    ("danger_sign", include_str!("../../scenarios/danger_sign.toml")),
    ("dynamic_door", include_str!("../../scenarios/dynamic_door.toml")),
    ("seated_chair", include_str!("../../scenarios/seated_chair.toml")),
    ("empty_corridor", include_str!("../../scenarios/empty_corridor.toml")),
];

/// Names of the scenarios shipped with the crate.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub map: MapSection,
    pub robot: RobotSection,
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    /// Extent in meters.
    pub width: f64,
    pub height: f64,
    pub resolution: f64,
    #[serde(default)]
    pub origin: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSection {
    /// `[x, y, heading_deg]`
    pub start: [f64; 3],
    pub goal: [f64; 3],
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub limits: RobotLimits,
}

fn default_radius() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub columns: usize,
    pub hfov_deg: f64,
    pub max_range: f64,
    /// Mount height above the floor, meters.
    pub height: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self {
            columns: 640,
            hfov_deg: 90.0,
            max_range: 8.0,
            height: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub max_ticks: usize,
    pub goal_tolerance: f64,
    /// Depth noise standard deviation as a fraction of range; 0 disables.
    pub depth_noise: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_ticks: 600,
            goal_tolerance: 0.3,
            depth_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpec {
    pub name: String,
    pub label: String,
    /// Corners `[min, max]` of an axis-aligned rectangle in the entity frame.
    #[serde(default)]
    pub rect: Option<[Point; 2]>,
    #[serde(default)]
    pub polygon: Option<Vec<Point>>,
    /// `[x, y, heading_deg]`; defaults to the world origin.
    #[serde(default)]
    pub pose: [f64; 3],
    /// Absent until a spawn event.
    #[serde(default)]
    pub hidden: bool,
    /// Included in the prior (pre-built) obstacle map.
    #[serde(default = "yes")]
    pub prior: bool,
}

fn yes() -> bool {
    true
}

impl EntitySpec {
    pub fn shape(&self) -> Polygon {
        match (&self.rect, &self.polygon) {
            (Some([a, b]), _) => Polygon::rect([a[0].min(b[0]), a[1].min(b[1])], [a[0].max(b[0]), a[1].max(b[1])]),
            (None, Some(v)) => Polygon::new(v.clone()),
            (None, None) => Polygon::new(Vec::new()),
        }
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.pose[0], self.pose[1], self.pose[2].to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub name: String,
    pub trigger: Trigger,
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// Simulation time has reached `at` seconds.
    Time { at: f64 },
    /// Robot center is within `radius` meters of `point`.
    RobotWithin { point: Point, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    Spawn { entity: String },
    Relabel { entity: String, label: String },
    /// Rotate about a world-frame pivot at constant rate.
    Rotate { entity: String, pivot: Point, angle_deg: f64, duration: f64 },
    /// Translate by a world-frame offset at constant rate.
    Translate { entity: String, offset: Point, duration: f64 },
}

impl Effect {
    pub fn entity(&self) -> &str {
        match self {
            Effect::Spawn { entity }
            | Effect::Relabel { entity, .. }
            | Effect::Rotate { entity, .. }
            | Effect::Translate { entity, .. } => entity,
        }
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn builtin(name: &str) -> Result<Self, SimError> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text))
            .unwrap_or_else(|| {
                Err(SimError::UnknownScenario {
                    name: name.to_string(),
                    valid: builtin_names().join(", "),
                })
            })
    }

    pub fn grid_spec(&self) -> Result<GridSpec, SimError> {
        let m = &self.map;
        let cols = (m.width / m.resolution).round() as usize + 1;
        let rows = (m.height / m.resolution).round() as usize + 1;
        GridSpec::new(rows, cols, m.resolution, m.origin).map_err(|e| invalid("map", e.to_string()))
    }

    pub fn camera(&self) -> CameraModel {
        let c = &self.camera;
        let mut cam = CameraModel::with_fov(c.columns, 1, c.hfov_deg.to_radians(), c.max_range);
        cam.mount_height = c.height;
        cam
    }

    pub fn start_pose(&self) -> Pose2D {
        pose3(self.robot.start)
    }

    pub fn goal_pose(&self) -> Pose2D {
        pose3(self.robot.goal)
    }

    /// Same scenario driven the other way: start and goal swapped.
    pub fn reversed(&self) -> Self {
        let mut s = self.clone();
        std::mem::swap(&mut s.robot.start, &mut s.robot.goal);
        s
    }

    pub fn entity(&self, name: &str) -> Option<&EntitySpec> {
        self.entities.iter().find(|e| e.name == name)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let m = &self.map;
        if !(m.resolution > 0.0 && m.width > 0.0 && m.height > 0.0) {
            return Err(invalid("map", "width, height and resolution must be positive"));
        }
        let spec = self.grid_spec()?;
        let r = &self.robot;
        if !(r.radius > 0.0) {
            return Err(invalid("robot.radius", "must be positive"));
        }
        let l = &r.limits;
        if !(l.v_max > 0.0 && l.omega_max > 0.0 && l.accel_max > 0.0 && l.alpha_max > 0.0) {
            return Err(invalid("robot.limits", "all limits must be positive"));
        }
        self.camera().validate().map_err(|e| invalid("camera", e))?;
        let s = &self.sim;
        if !(s.dt > 0.0) {
            return Err(invalid("sim.dt", "must be positive"));
        }
        if s.max_ticks == 0 {
            return Err(invalid("sim.max_ticks", "must be at least 1"));
        }
        if !(s.goal_tolerance > 0.0) {
            return Err(invalid("sim.goal_tolerance", "must be positive"));
        }
        if !(s.depth_noise >= 0.0) {
            return Err(invalid("sim.depth_noise", "must be non-negative"));
        }
        for (i, e) in self.entities.iter().enumerate() {
            let field = format!("entities[{i}]");
            if e.name.is_empty() {
                return Err(invalid(field, "name must be non-empty"));
            }
            if self.entities.iter().filter(|o| o.name == e.name).count() > 1 {
                return Err(invalid(field, format!("duplicate entity name {:?}", e.name)));
            }
            match (&e.rect, &e.polygon) {
                (Some(_), Some(_)) => return Err(invalid(field, "give either rect or polygon, not both")),
                (None, None) => return Err(invalid(field, "missing rect or polygon")),
                (None, Some(v)) if v.len() < 3 => return Err(invalid(field, "polygon needs at least 3 vertices")),
                _ => {}
            }
        }
        for (i, ev) in self.events.iter().enumerate() {
            let field = format!("events[{i}]");
            match ev.trigger {
                Trigger::Time { at } if !(at >= 0.0) => return Err(invalid(field, "trigger time must be >= 0")),
                Trigger::RobotWithin { radius, .. } if !(radius > 0.0) => {
                    return Err(invalid(field, "trigger radius must be positive"))
                }
                _ => {}
            }
            if ev.effects.is_empty() {
                return Err(invalid(field, "event has no effects"));
            }
            for fx in &ev.effects {
                if self.entity(fx.entity()).is_none() {
                    return Err(invalid(field, format!("unknown entity {:?}", fx.entity())));
                }
                match fx {
                    Effect::Rotate { duration, .. } | Effect::Translate { duration, .. } if !(*duration >= 0.0) => {
                        return Err(invalid(field, "motion duration must be >= 0"))
                    }
                    _ => {}
                }
            }
        }
        // start and goal in free space against the initial geometry
        for (what, p) in [("robot.start", self.start_pose()), ("robot.goal", self.goal_pose())] {
            let c = [p.x, p.y];
            if spec.grid_of(c).is_none() {
                return Err(invalid(what, "outside the map"));
            }
            for e in self.entities.iter().filter(|e| !e.hidden) {
                if e.shape().transformed(&e.pose()).intersects_disc(c, r.radius) {
                    return Err(invalid(what, format!("overlaps entity {:?}", e.name)));
                }
            }
        }
        Ok(())
    }
}

fn pose3(p: [f64; 3]) -> Pose2D {
    Pose2D::new(p[0], p[1], p[2].to_radians())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for name in builtin_names() {
            let s = Scenario::builtin(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn unknown_builtin_lists_names() {
        let err = Scenario::builtin("nope").unwrap_err().to_string();
        assert!(err.contains("dynamic_door") && err.contains("seated_chair"), "{err}");
    }

    #[test]
    fn reversed_swaps_only_endpoints() {
        let s = Scenario::builtin("dynamic_door").unwrap();
        let r = s.reversed();
        assert_eq!(r.robot.start, s.robot.goal);
        assert_eq!(r.robot.goal, s.robot.start);
        assert_eq!(r.entities, s.entities);
        assert_eq!(r.events, s.events);
        assert_eq!(r.reversed(), s);
    }

    #[test]
    fn field_level_errors() {
        let base = Scenario::builtin("empty_corridor").unwrap();
        let mut s = base.clone();
        s.sim.dt = 0.0;
        assert!(s.validate().unwrap_err().to_string().contains("sim.dt"));
        let mut s = base.clone();
        s.events.push(EventSpec {
            name: "ghost".into(),
            trigger: Trigger::Time { at: 1.0 },
            effects: vec![Effect::Spawn { entity: "missing".into() }],
        });
        assert!(s.validate().unwrap_err().to_string().contains("events["));
        let mut s = base;
        s.robot.start = [-50.0, 0.0, 0.0];
        assert!(s.validate().unwrap_err().to_string().contains("robot.start"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = Scenario::builtin("empty_corridor").map(|s| toml::to_string(&s).unwrap()).unwrap();
        assert!(Scenario::from_toml(&format!("bogus = 1\n{text}")).is_err());
    }
}
