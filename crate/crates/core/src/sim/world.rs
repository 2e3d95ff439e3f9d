//! World state, scripted events and sensor rendering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::geometry::{Point, Polygon};
use super::scenario::{Effect, Scenario, Trigger};
use super::SimError;
use crate::controller::{step_unicycle, RobotLimits, RobotState};
use crate::costmap::ObstacleMap;
use crate::grid::GridSpec;
use crate::hazard::SceneImage;
use crate::perception::{normalize_angle, CameraModel, DepthImage, Pose2D};

/// Semantic id of rays that hit nothing.
pub const EMPTY_LABEL: &str = "empty";

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub name: String,
    pub label: String,
    pub local: Polygon,
    pub pose: Pose2D,
    pub present: bool,
    pub in_prior: bool,
    world: Polygon,
}

impl Entity {
    pub fn shape(&self) -> &Polygon {
        &self.world
    }

    fn set_pose(&mut self, pose: Pose2D) {
        self.pose = pose;
        self.world = self.local.transformed(&pose);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MotionKind {
    Rotate { pivot: Point, angle: f64 },
    Translate { offset: Point },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Motion {
    entity: usize,
    start: f64,
    duration: f64,
    from: Pose2D,
    kind: MotionKind,
}

impl Motion {
    fn pose_at(&self, t: f64) -> Pose2D {
        let f = if self.duration > 0.0 {
            ((t - self.start) / self.duration).clamp(0.0, 1.0)
        } else {
            1.0
        };
        match self.kind {
            MotionKind::Translate { offset } => Pose2D {
                x: self.from.x + f * offset[0],
                y: self.from.y + f * offset[1],
                heading: self.from.heading,
            },
            MotionKind::Rotate { pivot, angle } => {
                let a = f * angle;
                let (s, c) = a.sin_cos();
                let (dx, dy) = (self.from.x - pivot[0], self.from.y - pivot[1]);
                Pose2D {
                    x: pivot[0] + c * dx - s * dy,
                    y: pivot[1] + s * dx + c * dy,
                    heading: normalize_angle(self.from.heading + a),
                }
            }
        }
    }

    fn done(&self, t: f64) -> bool {
        t >= self.start + self.duration
    }
}

/// Everything the robot senses in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub timestamp: f64,
    pub tick: u64,
    pub pose: Pose2D,
    pub image: SceneImage,
    pub depth: DepthImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collision {
    pub entity: String,
    pub label: String,
    /// Entity outline at the moment of contact.
    pub shape: Polygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub frame: SensorFrame,
    pub collision: Option<Collision>,
    /// Names of events that fired during this step.
    pub fired: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    spec: GridSpec,
    camera: CameraModel,
    limits: RobotLimits,
    radius: f64,
    dt: f64,
    noise: f64,
    tick: u64,
    robot: RobotState,
    entities: Vec<Entity>,
    fired: Vec<bool>,
    motions: Vec<Motion>,
    labels: Vec<String>,
    rng: ChaCha8Rng,
    initial_events: Vec<String>,
}

impl World {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, SimError> {
        scenario.validate()?;
        let entities: Vec<Entity> = scenario
            .entities
            .iter()
            .map(|e| {
                let local = e.shape();
                let pose = e.pose();
                Entity {
                    name: e.name.clone(),
                    label: e.label.clone(),
                    world: local.transformed(&pose),
                    local,
                    pose,
                    present: !e.hidden,
                    in_prior: e.prior && !e.hidden,
                }
            })
            .collect();
        let mut labels: Vec<String> = scenario.entities.iter().map(|e| e.label.clone()).collect();
        for ev in &scenario.events {
            for fx in &ev.effects {
                if let Effect::Relabel { label, .. } = fx {
                    labels.push(label.clone());
                }
            }
        }
        labels.sort();
        labels.dedup();
        labels.retain(|l| l != EMPTY_LABEL);
        labels.insert(0, EMPTY_LABEL.to_string());

        let mut w = Self {
            spec: scenario.grid_spec()?,
            camera: scenario.camera(),
            limits: scenario.robot.limits,
            radius: scenario.robot.radius,
            dt: scenario.sim.dt,
            noise: scenario.sim.depth_noise,
            tick: 0,
            robot: RobotState::at(scenario.start_pose()),
            entities,
            fired: vec![false; scenario.events.len()],
            motions: Vec::new(),
            labels,
            rng: ChaCha8Rng::seed_from_u64(seed),
            initial_events: Vec::new(),
            scenario: scenario.clone(),
        };
        w.initial_events = w.fire_triggers();
        w.advance_motions();
        Ok(w)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn limits(&self) -> &RobotLimits {
        &self.limits
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn robot_radius(&self) -> f64 {
        self.radius
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Simulation time, derived from the tick count so it never drifts.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.name == name)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Events that fired at construction (t = 0).
    pub fn initial_events(&self) -> &[String] {
        &self.initial_events
    }

    pub fn set_depth_noise(&mut self, fraction: f64) {
        self.noise = fraction.max(0.0);
    }

    /// Obstacle map of the geometry known before the run.
    pub fn prior_map(&self) -> ObstacleMap {
        let mut m = ObstacleMap::empty(self.spec);
        for e in self.entities.iter().filter(|e| e.in_prior) {
            let shape = e.local.transformed(&self.initial_pose(e));
            for c in shape.rasterize(&self.spec) {
                m.set(c, true);
            }
        }
        m
    }

    fn initial_pose(&self, e: &Entity) -> Pose2D {
        self.scenario.entity(&e.name).map(|s| s.pose()).unwrap_or(e.pose)
    }

    /// True ray distance from `origin` along unit `dir` to the nearest
    /// present entity, with its index.
    pub fn cast(&self, origin: Point, dir: Point) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, e) in self.entities.iter().enumerate().filter(|(_, e)| e.present) {
            if let Some(t) = e.world.ray_hit(origin, dir) {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// First present entity the robot disc touches.
    pub fn collision(&self) -> Option<Collision> {
        let p = self.robot.pose.position();
        self.entities
            .iter()
            .find(|e| e.present && e.world.intersects_disc(p, self.radius))
            .map(|e| Collision {
                entity: e.name.clone(),
                label: e.label.clone(),
                shape: e.world.clone(),
            })
    }

    /// Render depth and semantics for the current state.
    pub fn sense(&mut self) -> SensorFrame {
        let cam = self.camera.world_pose(&self.robot.pose);
        let w = self.camera.width;
        let mut depth = DepthImage::invalid(w, 1);
        let mut ids = vec![0u16; w];
        for (u, id) in ids.iter_mut().enumerate() {
            let a = cam.heading + self.camera.column_bearing(u);
            let (s, c) = a.sin_cos();
            let Some((t, i)) = self.cast([cam.x, cam.y], [c, s]) else {
                continue;
            };
            if t > self.camera.max_range {
                continue;
            }
            let range = if self.noise > 0.0 {
                let n: f64 = StandardNormal.sample(&mut self.rng);
                (t + n * self.noise * t).max(1e-3)
            } else {
                t
            };
            depth.set(u, 0, Some(range));
            *id = self.label_id(&self.entities[i].label);
        }
        SensorFrame {
            timestamp: self.time(),
            tick: self.tick,
            pose: self.robot.pose,
            image: SceneImage::with_semantics(self.time(), w, 1, self.labels.clone(), ids),
            depth,
        }
    }

    fn label_id(&self, label: &str) -> u16 {
        self.labels.iter().position(|l| l == label).unwrap_or(0) as u16
    }

    /// Advance one tick: dynamics, clock, triggers, entity motion, contact
    /// check, then render.
    pub fn step(&mut self, command: [f64; 2]) -> StepOutcome {
        self.robot = step_unicycle(&self.robot, command, &self.limits, self.dt);
        self.tick += 1;
        let fired = self.fire_triggers();
        self.advance_motions();
        let collision = self.collision();
        StepOutcome {
            frame: self.sense(),
            collision,
            fired,
        }
    }

    fn fire_triggers(&mut self) -> Vec<String> {
        let now = self.time();
        let p = self.robot.pose.position();
        let mut names = Vec::new();
        for k in 0..self.scenario.events.len() {
            if self.fired[k] {
                continue;
            }
            let ev = &self.scenario.events[k];
            let hit = match ev.trigger {
                Trigger::Time { at } => now + 1e-9 >= at,
                Trigger::RobotWithin { point, radius } => (p[0] - point[0]).hypot(p[1] - point[1]) <= radius,
            };
            if !hit {
                continue;
            }
            self.fired[k] = true;
            names.push(ev.name.clone());
            for fx in ev.effects.clone() {
                self.apply(&fx, now);
            }
        }
        names
    }

    fn apply(&mut self, fx: &Effect, now: f64) {
        let Some(i) = self.entities.iter().position(|e| e.name == fx.entity()) else {
            return;
        };
        match fx {
            Effect::Spawn { .. } => self.entities[i].present = true,
            Effect::Relabel { label, .. } => self.entities[i].label = label.clone(),
            Effect::Rotate {
                pivot,
                angle_deg,
                duration,
                ..
            } => self.push_motion(i, now, *duration, MotionKind::Rotate {
                pivot: *pivot,
                angle: angle_deg.to_radians(),
            }),
            Effect::Translate { offset, duration, .. } => {
                self.push_motion(i, now, *duration, MotionKind::Translate { offset: *offset })
            }
        }
    }

    fn push_motion(&mut self, entity: usize, now: f64, duration: f64, kind: MotionKind) {
        // a new motion on the same entity starts from wherever it is now
        self.motions.retain(|m| m.entity != entity);
        self.motions.push(Motion {
            entity,
            start: now,
            duration,
            from: self.entities[entity].pose,
            kind,
        });
    }

    fn advance_motions(&mut self) {
        let now = self.time();
        for m in &self.motions {
            let pose = m.pose_at(now);
            self.entities[m.entity].set_pose(pose);
        }
        self.motions.retain(|m| !m.done(now));
    }
}
