//! Deterministic 2D simulator for scripted hazard scenarios.

pub mod geometry;
pub mod scenario;
pub mod world;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use geometry::Polygon;
pub use scenario::{builtin_names, Effect, EntitySpec, EventSpec, Scenario, Trigger};
pub use world::{Collision, Entity, SensorFrame, StepOutcome, World, EMPTY_LABEL};

use crate::controller::RobotState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("unknown scenario {name:?}; valid names: {valid}")]
    UnknownScenario { name: String, valid: String },
    #[error("io error: {0}")]
    Io(String),
}

/// What a navigation stack reports back each tick besides its command.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NavInfo {
    /// Hazard cycle whose labels were used for segmentation this tick.
    pub hazard_cycle: Option<u64>,
    /// Timestamp of the frame that cycle reasoned about.
    pub hazard_frame_time: Option<f64>,
    pub hazard_published_at: Option<f64>,
    pub hazard_cells: usize,
    pub plan_cells: usize,
    pub stuck: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub command: [f64; 2],
    pub info: NavInfo,
}

pub trait Navigator {
    fn act(&mut self, frame: &SensorFrame, state: &RobotState) -> Decision;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    /// Time of the frame the command was computed from.
    pub time: f64,
    /// State after the step.
    pub state: RobotState,
    pub command: [f64; 2],
    pub collision: bool,
    pub info: NavInfo,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    /// Goal reached with zero collisions.
    pub success: bool,
    pub reached_goal: bool,
    pub timed_out: bool,
    pub collisions: usize,
    pub collision: Option<Collision>,
    /// Distance driven, meters.
    pub path_length: f64,
    pub ticks: usize,
    pub trace: Vec<TraceRow>,
}

/// Closed loop: sense, let the stack decide, step. Stops at the first
/// collision, at the goal, or after `max_ticks`.
pub fn run_scenario(world: &mut World, nav: &mut dyn Navigator, max_ticks: usize) -> RunRecord {
    let goal = world.scenario().goal_pose().position();
    let tol = world.scenario().sim.goal_tolerance;
    let mut frame = world.sense();
    let mut events: Vec<String> = world.initial_events().to_vec();
    let mut rec = RunRecord {
        scenario: world.scenario().name.clone(),
        success: false,
        reached_goal: false,
        timed_out: false,
        collisions: 0,
        collision: None,
        path_length: 0.0,
        ticks: 0,
        trace: Vec::new(),
    };
    let at_goal = |p: [f64; 2]| (p[0] - goal[0]).hypot(p[1] - goal[1]) <= tol;
    if at_goal(world.robot().pose.position()) {
        rec.reached_goal = true;
        rec.success = true;
        return rec;
    }
    for _ in 0..max_ticks {
        let d = nav.act(&frame, world.robot());
        let before = world.robot().pose.position();
        let out = world.step(d.command);
        let state = *world.robot();
        rec.path_length += geometry::dist(before, state.pose.position());
        rec.ticks += 1;
        events.extend(out.fired.iter().cloned());
        rec.trace.push(TraceRow {
            tick: frame.tick,
            time: frame.timestamp,
            state,
            command: d.command,
            collision: out.collision.is_some(),
            info: d.info,
            events: std::mem::take(&mut events),
        });
        if let Some(c) = out.collision {
            rec.collisions += 1;
            rec.collision = Some(c);
            return rec;
        }
        if at_goal(state.pose.position()) {
            rec.reached_goal = true;
            rec.success = true;
            return rec;
        }
        frame = out.frame;
    }
    rec.timed_out = true;
    rec
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

/// Per-tick trace with fixed numeric formatting.
pub fn write_trace_csv(record: &RunRecord, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "tick,time,x,y,heading,v,omega,cmd_v,cmd_omega,collision,stuck,hazard_cycle,hazard_frame_time,hazard_published_at,hazard_cells,plan_cells,events"
    )?;
    for r in &record.trace {
        let s = &r.state;
        writeln!(
            f,
            "{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{},{}",
            r.tick,
            r.time,
            s.pose.x,
            s.pose.y,
            s.pose.heading,
            s.v,
            s.omega,
            r.command[0],
            r.command[1],
            r.collision as u8,
            r.info.stuck as u8,
            opt(r.info.hazard_cycle),
            opt_f(r.info.hazard_frame_time),
            opt_f(r.info.hazard_published_at),
            r.info.hazard_cells,
            r.info.plan_cells,
            r.events.join(";"),
        )?;
    }
    f.flush()
}

/// Robot positions `(x, y)` from a trace written by [`write_trace_csv`].
pub fn read_trace_positions(path: &Path) -> std::io::Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty trace".into()))?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| bad(format!("trace has no `{name}` column")));
    let (xi, yi) = (col("x")?, col("y")?);
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |k: usize| {
                f.get(k)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| bad(format!("line {}: bad number in column {k}", i + 2)))
            };
            Ok([num(xi)?, num(yi)?])
        })
        .collect()
}
