use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hazardnav::export::{write_csv, write_pgm};
use hazardnav::harness::{mock_backend, plot_trajectory, run_once, run_sweep, write_artifacts, SweepConfig, SweepOutput};
use hazardnav::hazard::HazardBackend;
use hazardnav::sim::{builtin_names, read_trace_positions, Scenario, World};
use hazardnav::stack::Method;
use hazardnav::{fuse, GaussianCostMap};

#[derive(Parser)]
#[command(name = "hazardnav", version, about = "Hazard-aware navigation scenarios and sweeps")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one method.
    Run(RunArgs),
    /// Run every configured (method, scenario) series.
    Sweep(SweepArgs),
    /// Run one episode and export its final fused cost map.
    ExportMap(ExportArgs),
    /// Re-plot a trace CSV over a scenario's prior map.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Geometric,
    E2map,
    Ours,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Geometric => Method::Geometric,
            MethodArg::E2map => Method::E2map,
            MethodArg::Ours => Method::Ours,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Sweep config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Runs per series.
    #[arg(long)]
    runs: Option<usize>,
    /// First seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports and artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the network reasoning backend instead of the scripted one.
    #[arg(long)]
    live_vlm: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name or path to a scenario TOML file.
    #[arg(long)]
    scenario: String,
    #[arg(long, value_enum, default_value = "ours")]
    method: MethodArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    /// Restrict to these scenarios.
    #[arg(long)]
    scenario: Vec<String>,
    /// Restrict to these methods.
    #[arg(long, value_enum)]
    method: Vec<MethodArg>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapFormat {
    Pgm,
    Csv,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, value_enum, default_value = "ours")]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Export the prior obstacle map instead of running an episode.
    #[arg(long)]
    prior: bool,
    #[arg(long, value_enum, default_value = "pgm")]
    format: MapFormat,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace CSV written by `run` or `sweep`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    scenario: String,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose {
            tracing_subscriber::filter::LevelFilter::DEBUG
        } else {
            tracing_subscriber::filter::LevelFilter::WARN
        })
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(a) => {
            let mut cfg = load_config(a.common.config.as_deref())?;
            cfg.scenarios = vec![check_scenario(&a.scenario)?];
            cfg.methods = vec![a.method.into()];
            if a.common.runs.is_none() {
                cfg.runs = 1;
            }
            sweep(cfg, &a.common)
        }
        Command::Sweep(a) => {
            let mut cfg = load_config(a.common.config.as_deref())?;
            if !a.scenario.is_empty() {
                cfg.scenarios = a.scenario.iter().map(|s| check_scenario(s)).collect::<Result<_, _>>()?;
            }
            if !a.method.is_empty() {
                cfg.methods = a.method.iter().map(|&m| m.into()).collect();
            }
            sweep(cfg, &a.common)
        }
        Command::ExportMap(a) => export_map(a),
        Command::Replay(a) => replay(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<SweepConfig, Failure> {
    match path {
        Some(p) => SweepConfig::load(p).map_err(|e| Failure::usage(e.to_string())),
        None => Ok(SweepConfig::default()),
    }
}

/// Accept built-in names and existing scenario files.
fn check_scenario(name: &str) -> Result<String, Failure> {
    if name.ends_with(".toml") {
        Scenario::load(Path::new(name)).map_err(|e| Failure::usage(e.to_string()))?;
        return Ok(name.to_string());
    }
    if builtin_names().contains(&name) {
        Ok(name.to_string())
    } else {
        Err(Failure::usage(format!(
            "unknown scenario {name:?}; valid names: {}",
            builtin_names().join(", ")
        )))
    }
}

fn load_scenario(name: &str) -> Result<Scenario, Failure> {
    let name = check_scenario(name)?;
    if name.ends_with(".toml") {
        Scenario::load(Path::new(&name)).map_err(|e| Failure::usage(e.to_string()))
    } else {
        Scenario::builtin(&name).map_err(|e| Failure::usage(e.to_string()))
    }
}

type Factory = Box<dyn Fn() -> Box<dyn HazardBackend> + Sync>;

fn backend_factory(live: bool) -> Result<Factory, Failure> {
    if !live {
        return Ok(Box::new(mock_backend));
    }
    live_factory()
}

#[cfg(feature = "live")]
fn live_factory() -> Result<Factory, Failure> {
    use hazardnav::hazard::{HttpTransport, LiveBackend, LiveConfig};
    let cfg = LiveConfig::default().with_env_overrides();
    if cfg.api_key().is_none() {
        return Err(Failure::usage(format!("--live-vlm needs an API key in ${}", cfg.api_key_env)));
    }
    HttpTransport::new(&cfg).map_err(Failure::internal)?;
    Ok(Box::new(move || {
        let transport = HttpTransport::new(&cfg).expect("transport was constructible at startup");
        Box::new(LiveBackend::new(cfg.clone(), transport))
    }))
}

#[cfg(not(feature = "live"))]
fn live_factory() -> Result<Factory, Failure> {
    Err(Failure::usage("this binary was built without the `live` feature; rebuild with `--features live`"))
}

fn sweep(mut cfg: SweepConfig, common: &Common) -> Result<(), Failure> {
    if let Some(n) = common.runs {
        cfg.runs = n;
    }
    if let Some(s) = common.seed {
        cfg.seeds = (0..cfg.runs as u64).map(|i| s + i).collect();
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let factory = backend_factory(common.live_vlm)?;
    let output: SweepOutput = run_sweep(&cfg, &*factory).map_err(Failure::internal)?;
    print!("{}", output.report.table());
    for r in &output.report.runs {
        println!(
            "{} {} run {} seed {} {}: {} ({} ticks, {:.2} m{})",
            r.method,
            r.scenario,
            r.run,
            r.seed,
            r.direction.name(),
            if r.success { "success" } else { "failure" },
            r.ticks,
            r.path_length,
            match (&r.collided_with, r.timed_out) {
                (Some(e), _) => format!(", hit {e}"),
                (None, true) => ", timed out".to_string(),
                _ => String::new(),
            }
        );
    }
    if let Some(out) = &common.out {
        let manifest = write_artifacts(&output, out).map_err(Failure::internal)?;
        println!("wrote {} artifacts under {}", manifest.all().count(), out.display());
    }
    Ok(())
}

fn export_map(a: ExportArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref())?;
    let scenario = load_scenario(&a.scenario)?;
    let map: GaussianCostMap = if a.prior {
        let world = World::new(&scenario, a.seed).map_err(|e| Failure::usage(e.to_string()))?;
        let spec = *world.spec();
        fuse(&world.prior_map(), &GaussianCostMap::zeros(spec)).map_err(Failure::internal)?
    } else {
        let (_, map) = run_once(&scenario, a.method.into(), &cfg.stack, a.seed, cfg.depth_noise, cfg.max_ticks, &mock_backend, None)
            .map_err(Failure::internal)?;
        map
    };
    std::fs::create_dir_all(&a.out).map_err(Failure::internal)?;
    let stem = if a.prior {
        format!("{}_prior", scenario.name)
    } else {
        format!("{}_{}_{}", Method::from(a.method), scenario.name, a.seed)
    };
    match a.format {
        MapFormat::Pgm => {
            for p in write_pgm(&map, &a.out, &stem).map_err(Failure::internal)? {
                println!("{}", p.display());
            }
        }
        MapFormat::Csv => {
            let p = a.out.join(format!("{stem}.csv"));
            write_csv(&map, &p).map_err(Failure::internal)?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&a.scenario)?;
    let points = read_trace_positions(&a.trace).map_err(|e| Failure::usage(format!("{}: {e}", a.trace.display())))?;
    let world = World::new(&scenario, 0).map_err(|e| Failure::usage(e.to_string()))?;
    let spec = *world.spec();
    let map = fuse(&world.prior_map(), &GaussianCostMap::zeros(spec)).map_err(Failure::internal)?;
    // a trace may come from a reversed run, so mark its own endpoints
    let start = points.first().copied().unwrap_or(scenario.start_pose().position());
    let goal = points.last().copied().unwrap_or(scenario.goal_pose().position());
    plot_trajectory(&map, &points, start, goal, None)
        .save(&a.out)
        .map_err(|e| Failure::internal(format!("{}: {e}", a.out.display())))?;
    println!("{}", a.out.display());
    Ok(())
}
