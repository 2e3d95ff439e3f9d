//! Closed-loop navigation stacks: geometric baseline, event-memory baseline
//! and the full hazard-aware pipeline.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::controller::{mppi_step, ControlSequence, CostWeights, MppiConfig, PathTrack, RobotLimits, RobotState};
use crate::costmap::{apply_hazard_update, fuse, propagate_costs, Anxiety, AnxietyScoreMap, GaussianCostMap, GaussianParams, ObstacleMap};
use crate::grid::{Cell, GridSpec};
use crate::hazard::{HazardBackend, HazardCycle, HazardSnapshot, PromptSet};
use crate::perception::{
    masks_to_points, observe_obstacles, points_to_anxiety_cells, segment_hazards, visible_region, CameraModel,
    HazardVocabulary, OracleSegmenter, Pose2D, ProjectionFilter,
};
use crate::planner::{DStarLite, EdgeModel, PlanQuery, PlanResult};
use crate::sim::{Decision, NavInfo, Navigator, Polygon, SensorFrame, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Obstacle layer only.
    Geometric,
    /// Pre-built map plus anxiety placed where collisions happened in earlier runs.
    E2map,
    /// Obstacle layer fused with hazard cost fields from the reasoning cycle.
    Ours,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Geometric, Method::E2map, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::Geometric => "geometric",
            Method::E2map => "e2map",
            Method::Ours => "ours",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}; valid: geometric, e2map, ours"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    pub gaussian: GaussianParams,
    pub edges: EdgeModel,
    pub mppi: MppiConfig,
    pub weights: CostWeights,
    pub filter: ProjectionFilter,
    /// Obstacle inflation radius in meters (robot radius plus margin).
    pub inflation: f64,
    /// Free-space clearing stops this far short of each depth return.
    pub clear_margin: f64,
    /// Simulated reasoning-cycle latency, seconds.
    pub hazard_latency: f64,
    /// Hold still until the first reasoning cycle has finished.
    pub warmup: bool,
    /// Anxiety written where a collision happened (event-memory baseline).
    pub memory_anxiety: u8,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            gaussian: GaussianParams::default(),
            edges: EdgeModel::default(),
            mppi: MppiConfig::default(),
            weights: CostWeights::default(),
            filter: ProjectionFilter::default(),
            inflation: 0.3,
            clear_margin: 0.15,
            hazard_latency: 4.0,
            warmup: true,
            memory_anxiety: 3,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.gaussian.validate().map_err(|e| format!("gaussian: {e}"))?;
        if !(self.edges.weight > 0.0) {
            return Err("edges.weight: must be positive".into());
        }
        let m = &self.mppi;
        if m.samples == 0 || m.horizon == 0 {
            return Err("mppi: samples and horizon must be at least 1".into());
        }
        if !(m.lambda > 0.0 && m.dt > 0.0) {
            return Err("mppi: lambda and dt must be positive".into());
        }
        if !(self.inflation >= 0.0 && self.clear_margin >= 0.0 && self.hazard_latency >= 0.0) {
            return Err("inflation, clear_margin and hazard_latency must be non-negative".into());
        }
        Anxiety::new(self.memory_anxiety).map_err(|e| format!("memory_anxiety: {e}"))?;
        Ok(())
    }
}

/// Anxiety recorded at collision sites, carried from run to run.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMemory {
    pub map: AnxietyScoreMap,
    pub events: usize,
}

impl EventMemory {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            map: AnxietyScoreMap::empty(spec),
            events: 0,
        }
    }

    /// Mark the cells covered by whatever the robot hit.
    pub fn record(&mut self, shape: &Polygon, anxiety: Anxiety) {
        let spec = *self.map.spec();
        for c in shape.rasterize(&spec) {
            let a = self.map.get(c).max(anxiety);
            self.map.set(c, a);
        }
        self.events += 1;
    }
}

/// Per-run navigation stack.
pub struct NavStack {
    method: Method,
    config: StackConfig,
    spec: GridSpec,
    camera: CameraModel,
    limits: RobotLimits,
    goal: Pose2D,
    prior: ObstacleMap,
    live: ObstacleMap,
    anxiety: AnxietyScoreMap,
    cost: GaussianCostMap,
    fused: GaussianCostMap,
    cycle: Option<HazardCycle<Box<dyn HazardBackend>>>,
    segmenter: OracleSegmenter,
    planner: Option<DStarLite>,
    plan: Option<PlanResult>,
    track: Option<PathTrack>,
    nominal: ControlSequence,
    seed: u64,
    ticks: u64,
}

impl NavStack {
    /// `backend` drives the reasoning cycle for [`Method::Ours`]; `memory`
    /// seeds the anxiety layer for [`Method::E2map`].
    pub fn new(
        world: &World,
        method: Method,
        config: StackConfig,
        backend: Option<Box<dyn HazardBackend>>,
        vocabulary: HazardVocabulary,
        memory: Option<&EventMemory>,
        seed: u64,
    ) -> Self {
        let spec = *world.spec();
        let anxiety = match (method, memory) {
            (Method::E2map, Some(m)) => m.map.clone(),
            _ => AnxietyScoreMap::empty(spec),
        };
        let cycle = match method {
            Method::Ours => backend.map(|b| HazardCycle::new(b, PromptSet::default(), config.hazard_latency)),
            _ => None,
        };
        let mut s = Self {
            method,
            spec,
            camera: *world.camera(),
            limits: *world.limits(),
            goal: world.scenario().goal_pose(),
            prior: world.prior_map(),
            live: ObstacleMap::empty(spec),
            cost: GaussianCostMap::zeros(spec),
            fused: GaussianCostMap::zeros(spec),
            anxiety,
            cycle,
            segmenter: OracleSegmenter::new(vocabulary),
            planner: None,
            plan: None,
            track: None,
            nominal: ControlSequence::zeros(config.mppi.horizon, config.mppi.dt),
            seed,
            ticks: 0,
            config,
        };
        s.refresh_cost();
        s
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn fused(&self) -> &GaussianCostMap {
        &self.fused
    }

    pub fn anxiety(&self) -> &AnxietyScoreMap {
        &self.anxiety
    }

    pub fn plan(&self) -> Option<&PlanResult> {
        self.plan.as_ref()
    }

    pub fn latest_hazards(&self) -> Option<Arc<HazardSnapshot>> {
        self.cycle.as_ref().and_then(|c| c.latest())
    }

    fn refresh_cost(&mut self) {
        self.cost = propagate_costs(&self.anxiety, &self.config.gaussian).expect("validated gaussian params");
    }

    fn obstacle_layer(&self) -> ObstacleMap {
        let mut raw = self.prior.clone();
        for (i, &v) in self.live.cells().iter().enumerate() {
            if v == 1 {
                raw.set(self.spec.cell_at(i), true);
            }
        }
        raw.dilate(self.config.inflation / self.spec.resolution)
    }

    fn update_obstacles(&mut self, frame: &SensorFrame) {
        if self.method == Method::E2map {
            return;
        }
        let obs = observe_obstacles(&frame.depth, &self.camera, &frame.pose, &self.spec, self.config.clear_margin);
        for &c in &obs.free {
            self.live.set(c, false);
        }
        for &c in &obs.hits {
            self.live.set(c, true);
        }
    }

    fn update_hazards(&mut self, frame: &SensorFrame) -> (NavInfo, bool) {
        let mut info = NavInfo::default();
        let Some(cycle) = self.cycle.as_mut() else {
            let ready = !self.config.warmup || frame.timestamp + 1e-9 >= self.config.hazard_latency;
            return (info, ready);
        };
        cycle.tick(frame.timestamp, &frame.image);
        let Some(snap) = cycle.latest() else {
            return (info, !self.config.warmup);
        };
        info.hazard_cycle = Some(snap.cycle);
        info.hazard_frame_time = Some(snap.frame_timestamp);
        info.hazard_published_at = Some(snap.published_at);
        // segmentation of the current frame uses the (possibly stale) labels
        let hazards = snap.hazards();
        let masks = segment_hazards(&self.segmenter, &frame.image, &hazards);
        let points = masks_to_points(&masks, &frame.depth, &self.camera, &frame.pose);
        let cells = points_to_anxiety_cells(&points, &self.spec, &self.config.filter);
        let visible = visible_region(&frame.depth, &self.camera, &frame.pose, &self.spec);
        let next = apply_hazard_update(&self.anxiety, &cells, &visible).expect("matching specs");
        if next != self.anxiety {
            self.anxiety = next;
            self.refresh_cost();
        }
        (info, true)
    }

    /// Closest cell to `cell` that the planner may start from.
    fn free_start(&self, cell: Cell) -> Option<Cell> {
        let blocked = |c: Cell| self.config.edges.is_blocked(self.fused.get(c));
        if !blocked(cell) {
            return Some(cell);
        }
        self.spec
            .cells()
            .filter(|&c| !blocked(c))
            .min_by(|a, b| a.distance(cell).total_cmp(&b.distance(cell)).then(a.cmp(b)))
    }

    fn replan(&mut self, pose: &Pose2D) {
        let Some(here) = self.spec.grid_of(pose.position()).and_then(|c| self.free_start(c)) else {
            return;
        };
        let Some(goal) = self.spec.grid_of(self.goal.position()) else {
            return;
        };
        let result = match self.planner.as_mut() {
            Some(p) => {
                let changed: Vec<(Cell, f64)> = self
                    .fused
                    .values()
                    .iter()
                    .zip(p.map().values())
                    .enumerate()
                    .filter(|(_, (a, b))| a != b)
                    .map(|(i, (&a, _))| (self.spec.cell_at(i), a))
                    .collect();
                p.replan(&changed, here)
            }
            None => DStarLite::new(PlanQuery {
                start: here,
                goal,
                map: self.fused.clone(),
                edges: self.config.edges,
            })
            .and_then(|mut p| {
                let r = p.plan();
                self.planner = Some(p);
                r
            }),
        };
        match result {
            Ok(plan) => {
                self.track = Some(PathTrack::from_plan(&plan, &self.spec));
                self.plan = Some(plan);
            }
            Err(e) => debug!(error = %e, "replan failed; keeping previous path"),
        }
    }

    fn mppi_seed(&self) -> u64 {
        // splitmix64 of (run seed, tick)
        let mut z = self.seed ^ self.ticks.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

impl Navigator for NavStack {
    fn act(&mut self, frame: &SensorFrame, state: &RobotState) -> Decision {
        self.ticks += 1;
        self.update_obstacles(frame);
        let (mut info, ready) = self.update_hazards(frame);
        self.fused = fuse(&self.obstacle_layer(), &self.cost).expect("matching specs");
        info.hazard_cells = self.anxiety.hazard_count();
        if !ready {
            return Decision {
                command: [0.0, 0.0],
                info,
            };
        }
        self.replan(&state.pose);
        let Some(track) = self.track.as_ref() else {
            info.stuck = true;
            return Decision {
                command: [0.0, 0.0],
                info,
            };
        };
        info.plan_cells = self.plan.as_ref().map_or(0, |p| p.path.len());
        let out = mppi_step(
            state,
            &self.nominal,
            &self.fused,
            track,
            &self.config.mppi,
            &self.config.weights,
            &self.limits,
            self.mppi_seed(),
        );
        self.nominal = out.nominal;
        info.stuck = out.stuck;
        Decision {
            command: out.command,
            info,
        }
    }
}
