//! The `pushcraft` command line: planning, tracking, benchmarks, demo
//! management and the recording service.

pub mod service;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use pushcraft::benchmark::{benchmark_csv, format_summary, run_benchmark, summarize, BenchmarkSpec};
use pushcraft::demo::{reference_library, save_demo, DemoLibrary};
use pushcraft::dynamics::SliderPose;
use pushcraft::planner::{plan, PlanError, PlanMethod, PlanReport, PlanRequest, PlanSettings, PlannedTrajectory};
use pushcraft::tracking::{
    disturbance_sweep, sweep_csv, track, DisturbanceModel, TrackError, TrackingConfig,
    DEFAULT_TRUST_RADIUS,
};

pub const DEMO_DIR_ENV: &str = "PUSHCRAFT_DEMO_DIR";
pub const DEFAULT_DEMO_DIR: &str = "demos";

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pushcraft", version, about = "Plan, track and benchmark planar pushing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a push to a target pose.
    Plan(PlanArgs),
    /// Replay a plan in closed loop under pose disturbances.
    Track(TrackArgs),
    /// Compare the planning methods on seeded random targets.
    Benchmark(BenchmarkArgs),
    /// Tracking errors over a grid of disturbance bounds.
    Sweep(SweepArgs),
    /// Manage the demonstration library.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Run the HTTP recording service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, num_args = 3, value_names = ["X", "Y", "THETA"], allow_negative_numbers = true, required = true)]
    pub target: Vec<f64>,
    /// zs, ds, dp or ws
    #[arg(long, default_value = "ws")]
    pub method: PlanMethod,
    /// Demo directory (default: $PUSHCRAFT_DEMO_DIR, then ./demos).
    #[arg(long)]
    pub demos: Option<PathBuf>,
    /// Solution JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Report JSON path (default: the solution path with `.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Solution JSON written by `plan` (a report file also works).
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, num_args = 3, value_names = ["X_M", "Y_M", "THETA_M"], default_values_t = [0.0, 0.0, 0.0])]
    pub disturbance: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRUST_RADIUS)]
    pub trust_radius: f64,
    /// Trace CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, default_value_t = 50)]
    pub targets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values = ["zs", "ds", "dp", "ws"])]
    pub methods: Vec<PlanMethod>,
    #[arg(long)]
    pub demos: Option<PathBuf>,
    /// Per-target CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the summary table here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Record wall-clock times in the CSV (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// Largest x/y bound; the grid runs linearly from zero.
    #[arg(long, default_value_t = 0.04)]
    pub max_xy: f64,
    #[arg(long, default_value_t = 0.117)]
    pub max_theta: f64,
    /// Number of grid points including zero.
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRUST_RADIUS)]
    pub trust_radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Write the three scripted reference demonstrations.
    Synthesize {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// List the demonstrations in a directory.
    List {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub demos: Option<PathBuf>,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        let code = match e {
            PlanError::Solver(_) => EXIT_SOLVER,
            PlanError::InvalidRequest(_) | PlanError::Demo(_) => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

type CmdResult = Result<i32, Failure>;

pub fn demo_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DEMO_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DEMO_DIR))
}

fn load_library(flag: Option<&Path>) -> Result<DemoLibrary, Failure> {
    let dir = demo_dir(flag);
    let library = DemoLibrary::load_dir(&dir)
        .map_err(|e| Failure::usage(format!("cannot load demos from {}: {e}", dir.display())))?;
    if library.is_empty() {
        return Err(Failure::usage(format!("no demos in {}", dir.display())));
    }
    Ok(library)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn settings(horizon: Option<usize>) -> PlanSettings {
    let mut s = PlanSettings::default();
    if let Some(h) = horizon {
        s.horizon = h;
    }
    s
}

fn cmd_plan(args: &PlanArgs) -> CmdResult {
    let target = SliderPose::new(args.target[0], args.target[1], args.target[2]);
    let library = if args.method.uses_demo() {
        load_library(args.demos.as_deref())?
    } else {
        DemoLibrary::default()
    };
    let request = PlanRequest { target, method: args.method, settings: settings(args.horizon) };
    let report = plan(&request, &library)?;
    write(&args.out, &serde_json::to_string(&report.solution).expect("serializable"))?;
    let report_path = args.report.clone().unwrap_or_else(|| args.out.with_extension("report.json"));
    write(&report_path, &serde_json::to_string_pretty(&report).expect("serializable"))?;
    println!(
        "{}: x_err {:.4} m, y_err {:.4} m, theta_err {:.4} rad, cost {:.4e}, {} iterations -> {}",
        report.method,
        report.x_err,
        report.y_err,
        report.theta_err,
        report.solution.total_cost,
        report.solution.iterations,
        if report.success { "success" } else { "miss" }
    );
    Ok(if report.success { EXIT_OK } else { EXIT_MISS })
}

/// Reads a solution file, or the solution inside a report file.
pub fn read_solution(path: &Path) -> Result<PlannedTrajectory, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let plan = serde_json::from_str::<PlannedTrajectory>(&text)
        .or_else(|e| serde_json::from_str::<PlanReport>(&text).map(|r| r.solution).map_err(|_| e))
        .map_err(|e| Failure::usage(format!("malformed solution file {}: {e}", path.display())))?;
    plan.validate()
        .map_err(|e| Failure::usage(format!("malformed solution file {}: {e}", path.display())))?;
    Ok(plan)
}

fn track_failure(e: TrackError) -> Failure {
    match e {
        TrackError::NonFiniteRollout { .. } => Failure { code: EXIT_MISS, message: e.to_string() },
        _ => Failure::usage(e.to_string()),
    }
}

fn cmd_track(args: &TrackArgs) -> CmdResult {
    let plan = read_solution(&args.solution)?;
    let d = &args.disturbance;
    let model = DisturbanceModel::new(d[0], d[1], d[2], args.seed);
    let config = TrackingConfig { trust_radius: args.trust_radius, ..TrackingConfig::default() };
    let trace = track(&plan, &model, &config).map_err(track_failure)?;
    write(&args.out, &trace.to_csv())?;
    println!(
        "x_err {:.4} m, y_err {:.4} m, theta_err {:.4} rad -> {}",
        trace.x_err,
        trace.y_err,
        trace.theta_err,
        if trace.within_tolerance { "within tolerance" } else { "outside tolerance" }
    );
    Ok(if trace.within_tolerance { EXIT_OK } else { EXIT_MISS })
}

fn cmd_benchmark(args: &BenchmarkArgs) -> CmdResult {
    let spec = BenchmarkSpec { targets: args.targets, seed: args.seed, methods: args.methods.clone() };
    spec.validate()?;
    let library = if spec.methods.iter().any(|m| m.uses_demo()) {
        load_library(args.demos.as_deref())?
    } else {
        DemoLibrary::default()
    };
    let outcome = run_benchmark(&spec, &library, &settings(args.horizon))?;
    write(&args.out, &benchmark_csv(&outcome.rows, args.timing))?;
    let table = format_summary(&summarize(&outcome.rows));
    if let Some(path) = &args.summary {
        write(path, &table)?;
    }
    print!("{table}");
    Ok(EXIT_OK)
}

/// `points` evenly spaced bounds from zero up to the maxima.
pub fn sweep_grid(max_xy: f64, max_theta: f64, points: usize) -> Vec<(f64, f64)> {
    let last = points.saturating_sub(1).max(1) as f64;
    (0..points)
        .map(|i| (max_xy * i as f64 / last, max_theta * i as f64 / last))
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    if args.points == 0 {
        return Err(Failure::usage("--points must be at least 1"));
    }
    let plan = read_solution(&args.solution)?;
    let config = TrackingConfig { trust_radius: args.trust_radius, ..TrackingConfig::default() };
    let grid = sweep_grid(args.max_xy, args.max_theta, args.points);
    let rows = disturbance_sweep(&plan, &grid, args.base_seed, args.seeds, &config).map_err(track_failure)?;
    let csv = sweep_csv(&rows);
    write(&args.out, &csv)?;
    print!("{csv}");
    Ok(EXIT_OK)
}

fn cmd_demo(cmd: &DemoCommand) -> CmdResult {
    match cmd {
        DemoCommand::Synthesize { out_dir } => {
            let dir = demo_dir(out_dir.as_deref());
            let library = reference_library(&Default::default())
                .map_err(|e| Failure { code: EXIT_SOLVER, message: e.to_string() })?;
            fs::create_dir_all(&dir)
                .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
            for demo in &library.demos {
                let path = dir.join(format!("{}.json", demo.label));
                save_demo(&path, demo).map_err(|e| Failure::usage(e.to_string()))?;
                println!("{} ({} switches) -> {}", demo.label, demo.switch_count(), path.display());
            }
            Ok(EXIT_OK)
        }
        DemoCommand::List { dir } => {
            let library = load_library(dir.as_deref())?;
            println!("{:<24} {:>4} {:>5}  reached (x, y, theta)", "label", "N_s", "steps");
            for d in &library.demos {
                println!(
                    "{:<24} {:>4} {:>5}  ({:.3}, {:.3}, {:.3})",
                    d.label,
                    d.switch_count(),
                    d.horizon(),
                    d.reached.x,
                    d.reached.y,
                    d.reached.theta
                );
            }
            Ok(EXIT_OK)
        }
    }
}

fn cmd_serve(args: &ServeArgs) -> CmdResult {
    let dir = demo_dir(args.demos.as_deref());
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| Failure { code: EXIT_SOLVER, message: e.to_string() })?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::usage(format!("cannot bind {addr}: {e}")))?;
        tracing::info!("serving on http://{addr}, demos in {}", dir.display());
        let app = service::router(Arc::new(service::AppState::new(dir)));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Failure { code: EXIT_SOLVER, message: e.to_string() })?;
        Ok(EXIT_OK)
    })
}

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Track(a) => cmd_track(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Demo(c) => cmd_demo(c),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
