//! Scenario sweeps: run every (method, scenario) series, aggregate success
//! rates and write reports, traces, map snapshots and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{Anxiety, GaussianCostMap};
use crate::export::write_pgm;
use crate::hazard::{FixtureTable, HazardBackend, MockBackend};
use crate::sim::{run_scenario, write_trace_csv, RunRecord, Scenario, SimError, World};
use crate::stack::{EventMemory, Method, NavStack, StackConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("artifact error: {0}")]
    Artifact(String),
}

fn config_err(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Built-in scenario names or paths to scenario TOML files.
    pub scenarios: Vec<String>,
    pub methods: Vec<Method>,
    pub runs: usize,
    /// One seed per run; missing entries continue from the last one.
    pub seeds: Vec<u64>,
    /// Odd-numbered runs drive the scenario in reverse.
    pub alternate_direction: bool,
    /// Overrides the scenario's depth noise fraction.
    pub depth_noise: Option<f64>,
    pub max_ticks: Option<usize>,
    pub stack: StackConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["danger_sign".into(), "dynamic_door".into(), "seated_chair".into()],
            methods: Method::ALL.to_vec(),
            runs: 10,
            seeds: (0..10).collect(),
            alternate_direction: true,
            depth_noise: None,
            max_ticks: None,
            stack: StackConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let c: SweepConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.scenarios.is_empty() {
            return Err(config_err("scenarios", "at least one scenario is required"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "at least one method is required"));
        }
        if self.runs == 0 {
            return Err(config_err("runs", "must be at least 1"));
        }
        if let Some(n) = self.depth_noise {
            if !(n >= 0.0) {
                return Err(config_err("depth_noise", "must be non-negative"));
            }
        }
        if self.max_ticks == Some(0) {
            return Err(config_err("max_ticks", "must be at least 1"));
        }
        self.stack.validate().map_err(|m| config_err("stack", m))?;
        Ok(())
    }

    pub fn seed(&self, run: usize) -> u64 {
        match self.seeds.get(run) {
            Some(&s) => s,
            None => {
                let last = self.seeds.last().copied().unwrap_or(0);
                last + (run + 1 - self.seeds.len()) as u64
            }
        }
    }

    /// Resolve scenario entries to parsed scenarios.
    pub fn load_scenarios(&self) -> Result<Vec<Scenario>, HarnessError> {
        self.scenarios
            .iter()
            .map(|s| {
                if s.ends_with(".toml") {
                    Ok(Scenario::load(Path::new(s))?)
                } else {
                    Ok(Scenario::builtin(s)?)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub scenario: String,
    pub run: usize,
    pub seed: u64,
    pub direction: Direction,
    pub success: bool,
    pub collisions: usize,
    pub collided_with: Option<String>,
    pub timed_out: bool,
    pub ticks: usize,
    pub path_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub scenario: String,
    pub successes: usize,
    pub runs: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub mean_path_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunSummary>,
}

impl SweepReport {
    pub fn row(&self, method: Method, scenario: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.scenario == scenario)
    }

    pub fn series(&self, method: Method, scenario: &str) -> Vec<&RunSummary> {
        self.runs.iter().filter(|r| r.method == method && r.scenario == scenario).collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,scenario,successes,runs,collisions,timeouts,mean_path_length\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.4}",
                r.method, r.scenario, r.successes, r.runs, r.collisions, r.timeouts, r.mean_path_length
            );
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("method,scenario,run,seed,direction,success,collisions,collided_with,timed_out,ticks,path_length\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{:.4}",
                r.method,
                r.scenario,
                r.run,
                r.seed,
                r.direction.name(),
                r.success as u8,
                r.collisions,
                r.collided_with.as_deref().unwrap_or(""),
                r.timed_out as u8,
                r.ticks,
                r.path_length
            );
        }
        s
    }

    /// Success table with one row per method and one column per scenario.
    pub fn table(&self) -> String {
        let mut scenarios: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !scenarios.contains(&r.scenario.as_str()) {
                scenarios.push(&r.scenario);
            }
        }
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.dedup();
        let w = scenarios.iter().map(|s| s.len()).max().unwrap_or(0).max(8);
        let mut out = format!("{:<10}", "method");
        for s in &scenarios {
            let _ = write!(out, " | {s:>w$}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        for m in methods {
            let _ = write!(out, "{:<10}", m.name());
            for s in &scenarios {
                let cell = self.row(m, s).map(|r| format!("{}/{}", r.successes, r.runs)).unwrap_or_default();
                let _ = write!(out, " | {cell:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

/// One finished run with what is needed to write its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub record: RunRecord,
    pub final_map: GaussianCostMap,
    pub scenario: Scenario,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub report: SweepReport,
    pub runs: Vec<RunOutput>,
}

/// Factory for reasoning backends; called once per run.
pub type BackendFactory<'a> = dyn Fn() -> Box<dyn HazardBackend> + Sync + 'a;

pub fn mock_backend() -> Box<dyn HazardBackend> {
    Box::new(MockBackend::new(FixtureTable::builtin()))
}

/// Run a single episode.
#[allow(clippy::too_many_arguments)]
pub fn run_once(
    scenario: &Scenario,
    method: Method,
    stack: &StackConfig,
    seed: u64,
    depth_noise: Option<f64>,
    max_ticks: Option<usize>,
    backend: &BackendFactory<'_>,
    memory: Option<&EventMemory>,
) -> Result<(RunRecord, GaussianCostMap), HarnessError> {
    let mut world = World::new(scenario, seed)?;
    if let Some(n) = depth_noise {
        world.set_depth_noise(n);
    }
    let vocabulary = FixtureTable::builtin().vocabulary();
    let backend = (method == Method::Ours).then(backend);
    let mut nav = NavStack::new(&world, method, *stack, backend, vocabulary, memory, seed);
    let ticks = max_ticks.unwrap_or(scenario.sim.max_ticks);
    let record = run_scenario(&mut world, &mut nav, ticks);
    Ok((record, nav.fused().clone()))
}

fn run_series(
    config: &SweepConfig,
    scenario: &Scenario,
    method: Method,
    backend: &BackendFactory<'_>,
) -> Result<Vec<RunOutput>, HarnessError> {
    let job = |run: usize, memory: Option<&EventMemory>| -> Result<RunOutput, HarnessError> {
        let direction = if config.alternate_direction && run % 2 == 1 {
            Direction::Reverse
        } else {
            Direction::Forward
        };
        let sc = match direction {
            Direction::Forward => scenario.clone(),
            Direction::Reverse => scenario.reversed(),
        };
        let seed = config.seed(run);
        let (record, final_map) = run_once(&sc, method, &config.stack, seed, config.depth_noise, config.max_ticks, backend, memory)?;
        Ok(RunOutput {
            summary: RunSummary {
                method,
                scenario: scenario.name.clone(),
                run,
                seed,
                direction,
                success: record.success,
                collisions: record.collisions,
                collided_with: record.collision.as_ref().map(|c| c.entity.clone()),
                timed_out: record.timed_out,
                ticks: record.ticks,
                path_length: record.path_length,
            },
            record,
            final_map,
            scenario: sc,
        })
    };
    if method == Method::E2map {
        // experience carries over, so the series runs in order
        let mut memory = EventMemory::new(scenario.grid_spec()?);
        let anxiety = Anxiety::new(config.stack.memory_anxiety).expect("validated");
        let mut out = Vec::with_capacity(config.runs);
        for run in 0..config.runs {
            let r = job(run, Some(&memory))?;
            if let Some(c) = &r.record.collision {
                memory.record(&c.shape, anxiety);
            }
            out.push(r);
        }
        Ok(out)
    } else {
        (0..config.runs).into_par_iter().map(|run| job(run, None)).collect()
    }
}

pub fn run_sweep(config: &SweepConfig, backend: &BackendFactory<'_>) -> Result<SweepOutput, HarnessError> {
    config.validate()?;
    let scenarios = config.load_scenarios()?;
    let mut series: Vec<(Method, &Scenario)> = Vec::new();
    for &m in &config.methods {
        for s in &scenarios {
            series.push((m, s));
        }
    }
    let results: Vec<Vec<RunOutput>> = series
        .par_iter()
        .map(|(m, s)| run_series(config, s, *m, backend))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for ((method, scenario), outs) in series.iter().zip(&results) {
        let n = outs.len();
        rows.push(SweepRow {
            method: *method,
            scenario: scenario.name.clone(),
            successes: outs.iter().filter(|o| o.summary.success).count(),
            runs: n,
            collisions: outs.iter().map(|o| o.summary.collisions).sum(),
            timeouts: outs.iter().filter(|o| o.summary.timed_out).count(),
            mean_path_length: outs.iter().map(|o| o.summary.path_length).sum::<f64>() / n as f64,
        });
        runs.extend(outs.iter().map(|o| o.summary.clone()));
    }
    Ok(SweepOutput {
        report: SweepReport { rows, runs },
        runs: results.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Artifact paths relative to the output directory, by kind.
    pub artifacts: BTreeMap<String, Vec<String>>,
}

impl Manifest {
    fn add(&mut self, kind: &str, root: &Path, path: &Path) {
        let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.artifacts.entry(kind.to_string()).or_default().push(rel);
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.artifacts.values().flatten()
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn run_stem(r: &RunSummary) -> String {
    format!("{}_{}_{:02}", r.method, r.scenario, r.run)
}

/// Write reports, traces, final maps and plots under `out`; returns the
/// manifest, which is also written as `manifest.json`.
pub fn write_artifacts(output: &SweepOutput, out: &Path) -> Result<Manifest, HarnessError> {
    let mut manifest = Manifest::default();
    for sub in ["traces", "maps", "plots"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let report = &output.report;
    for (name, body) in [
        ("report.csv", report.summary_csv()),
        ("runs.csv", report.runs_csv()),
        ("table.txt", report.table()),
    ] {
        let p = out.join(name);
        write_file(&p, body.as_bytes())?;
        manifest.add("report", out, &p);
    }
    for r in &output.runs {
        let stem = run_stem(&r.summary);
        let trace = out.join("traces").join(format!("{stem}.csv"));
        write_trace_csv(&r.record, &trace).map_err(io_err(&trace))?;
        manifest.add("trace", out, &trace);
        let maps = write_pgm(&r.final_map, &out.join("maps"), &stem).map_err(|e| HarnessError::Artifact(e.to_string()))?;
        for p in maps {
            manifest.add("map", out, &p);
        }
        let plot = out.join("plots").join(format!("{stem}.png"));
        plot_run(&r.final_map, &r.record, &r.scenario)
            .save(&plot)
            .map_err(|e| HarnessError::Artifact(format!("{}: {e}", plot.display())))?;
        manifest.add("plot", out, &plot);
    }
    let mpath = out.join("manifest.json");
    manifest.add("manifest", out, &mpath);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| HarnessError::Artifact(e.to_string()))?;
    write_file(&mpath, &json)?;
    Ok(manifest)
}

const PLOT_SCALE: u32 = 4;

/// Trajectory over the final fused map; top of the image is max y.
pub fn plot_run(map: &GaussianCostMap, record: &RunRecord, scenario: &Scenario) -> RgbImage {
    let points: Vec<[f64; 2]> = record.trace.iter().map(|r| r.state.pose.position()).collect();
    let hit = record.collision.as_ref().and(points.last().copied());
    plot_trajectory(map, &points, scenario.start_pose().position(), scenario.goal_pose().position(), hit)
}

pub fn plot_trajectory(
    map: &GaussianCostMap,
    points: &[[f64; 2]],
    start: [f64; 2],
    goal: [f64; 2],
    collision: Option<[f64; 2]>,
) -> RgbImage {
    let spec = *map.spec();
    let (w, h) = (spec.cols as u32 * PLOT_SCALE, spec.rows as u32 * PLOT_SCALE);
    let mut img = RgbImage::new(w, h);
    for cell in spec.cells() {
        let c = map.get(cell);
        let px = if c >= 1.0 {
            Rgb([20, 20, 20])
        } else {
            let v = (255.0 * (1.0 - c)).round() as u8;
            Rgb([255, v, v])
        };
        let (x0, y0) = (cell.col as u32 * PLOT_SCALE, (spec.rows - 1 - cell.row) as u32 * PLOT_SCALE);
        for dy in 0..PLOT_SCALE {
            for dx in 0..PLOT_SCALE {
                img.put_pixel(x0 + dx, y0 + dy, px);
            }
        }
    }
    let to_px = |p: [f64; 2]| -> Option<(i64, i64)> {
        let [r, c] = spec.grid_coords(p);
        let x = ((c + 0.5) * PLOT_SCALE as f64).floor();
        let y = ((spec.rows as f64 - 0.5 - r) * PLOT_SCALE as f64).floor();
        (x.is_finite() && y.is_finite()).then_some((x as i64, y as i64))
    };
    let mut dot = |p: [f64; 2], color: Rgb<u8>, r: i64| {
        if let Some((x, y)) = to_px(p) {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                        img.put_pixel(xx as u32, yy as u32, color);
                    }
                }
            }
        }
    };
    for &p in points {
        dot(p, Rgb([30, 90, 220]), 1);
    }
    dot(start, Rgb([20, 160, 60]), 3);
    dot(goal, Rgb([230, 160, 0]), 3);
    if let Some(p) = collision {
        dot(p, Rgb([200, 0, 200]), 3);
    }
    img
}
