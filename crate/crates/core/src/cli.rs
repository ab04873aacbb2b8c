//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 runtime error
//! (unreachable destination, remote failure, I/O while writing).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{self, DatasetError};
use crate::envmodel::{self, EnvError, GenParams, Scene};
use crate::gridgraph::{build_graph, CellId, GridGraph, DEFAULT_EPSILON};
use crate::llm_bridge::{
    parse_route_text, GraphPlanner, Perturbation, PlannerKind, RemoteConfig, DEFAULT_TOKEN_ENV_VAR,
};
use crate::planner_eval::{evaluate_planner, EvalError, EvalOptions};
use crate::propagation::{self, CoverageError, CoverageMap, PropagationParams};
use crate::render::{render_svg, RenderSpec, RouteOverlay};
use crate::routing::{plan_greedy_alg1, plan_shortest, plan_signal_aware, Route, RouteError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<CoverageError> for CliError {
    fn from(e: CoverageError) -> Self {
        match e {
            CoverageError::Io(_) => Self::runtime(e.to_string()),
            _ => Self::usage(e.to_string()),
        }
    }
}

impl From<RouteError> for CliError {
    fn from(e: RouteError) -> Self {
        match e {
            RouteError::Unreachable(..) => Self::runtime(e.to_string()),
            _ => Self::usage(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) | DatasetError::Exhausted { .. } => Self::runtime(e.to_string()),
            DatasetError::Route(r) => r.into(),
            _ => Self::usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::runtime(e.to_string())
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

#[derive(Parser, Debug)]
#[command(name = "ctmap", version, about = "Connectivity-aware route planning over radio coverage maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a random urban scene
    GenEnv(GenEnvArgs),
    /// Compute a coverage map for a scene
    Coverage(CoverageArgs),
    /// Plan one route and print it in the assistant grammar
    Route(RouteArgs),
    /// Build the instruction dataset and its train/test split
    Dataset(DatasetArgs),
    /// Score a planner against the optimal routes of a test set
    Eval(EvalArgs),
    /// Render a coverage map with route overlays as SVG
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct GenEnvArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 25)]
    pub blocks: usize,
    #[arg(long, default_value_t = 20.0)]
    pub block_min: f64,
    #[arg(long, default_value_t = 60.0)]
    pub block_max: f64,
    #[arg(long, default_value_t = 4)]
    pub stations: usize,
    #[arg(long, default_value_t = 700.0)]
    pub width: f64,
    #[arg(long, default_value_t = 600.0)]
    pub height: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    pub nlos_penalty: f64,
    #[arg(long, default_value_t = 2.0)]
    pub exponent: f64,
    #[arg(long, default_value_t = 1.0)]
    pub min_distance: f64,
    #[arg(long, default_value_t = 0.0)]
    pub shadowing_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub shadowing_seed: u64,
}

fn parse_cell(s: &str) -> Result<CellId, String> {
    let (c, r) = s.split_once(',').ok_or("expected COL,ROW")?;
    let col = c.trim().parse().map_err(|_| format!("bad column {c:?}"))?;
    let row = r.trim().parse().map_err(|_| format!("bad row {r:?}"))?;
    Ok(CellId::new(col, row))
}

#[derive(Args, Debug)]
pub struct RouteArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, value_parser = parse_cell)]
    pub from: CellId,
    #[arg(long, value_parser = parse_cell)]
    pub to: CellId,
    /// oracle, shortest or greedy
    #[arg(long, default_value = "oracle")]
    pub planner: String,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Also write an SVG of the route over the heat map
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = dataset::DEFAULT_SPLIT_RATIO)]
    pub split: f64,
    #[arg(long, default_value_t = dataset::DEFAULT_MIN_SEPARATION_M)]
    pub min_separation: f64,
    #[arg(long, default_value = dataset::DEFAULT_TEMPLATE)]
    pub template: String,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Directory receiving dataset.jsonl, train.jsonl and test.jsonl
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// oracle | shortest | greedy | mock[:none|:empty|:corrupt:P|:detour:K] | remote
    #[arg(long)]
    pub planner: String,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    /// Seed for mock perturbations
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    pub model: String,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    pub max_retries: usize,
    #[arg(long, default_value = DEFAULT_TOKEN_ENV_VAR)]
    pub token_env: String,
    #[arg(long, default_value_t = 250)]
    pub backoff_ms: u64,
    /// Accept the first bracketed coordinate list when strict parsing fails
    #[arg(long)]
    pub lenient: bool,
    /// Predictions in flight at once
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    /// Write the full per-query report as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// FILE:COLOR[:LABEL], FILE holding assistant-grammar route text
    #[arg(long = "route")]
    pub routes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub cell_px: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub dbm_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub dbm_max: Option<f64>,
}

fn load_map(path: &Path) -> Result<CoverageMap, CliError> {
    propagation::load_coverage(path).map_err(|e| match e {
        CoverageError::Io(io) => CliError::usage(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn graph_for(map: &CoverageMap, epsilon: f64) -> Result<GridGraph, CliError> {
    build_graph(map, epsilon).map_err(|e| CliError::usage(e.to_string()))
}

fn cmd_gen_env(a: &GenEnvArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = GenParams {
        width_m: a.width,
        height_m: a.height,
        blocks: a.blocks,
        block_min_m: a.block_min,
        block_max_m: a.block_max,
        stations: a.stations,
    };
    let (env, stations) = envmodel::generate_random_environment(a.seed, &params)?;
    let doc = Scene::new(env, stations).to_json();
    envmodel::load_environment(&doc)?;
    write_file(&a.out, doc + "\n")?;
    writeln!(out, "{}", a.out.display()).ok();
    Ok(())
}

fn cmd_coverage(a: &CoverageArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (env, stations) = envmodel::load_environment(&read_file(&a.scene)?)?;
    let params = PropagationParams {
        nlos_penalty_db: a.nlos_penalty,
        path_loss_exponent: a.exponent,
        min_distance_m: a.min_distance,
        shadowing_sigma_db: a.shadowing_sigma,
        shadowing_seed: a.shadowing_seed,
    };
    let map = propagation::compute_coverage(&env, &stations, &params)?;
    propagation::save_coverage(&map, &a.out)?;
    log::info!("coverage {}x{} written to {}", map.cols, map.rows, a.out.display());
    writeln!(out, "{}", a.out.display()).ok();
    Ok(())
}

fn plan_by_name(name: &str, g: &GridGraph, s: CellId, d: CellId) -> Result<Route, CliError> {
    Ok(match name {
        "oracle" => plan_signal_aware(g, s, d)?,
        "shortest" => plan_shortest(g, s, d)?,
        "greedy" => plan_greedy_alg1(g, s, d)?,
        other => return Err(CliError::usage(format!("unknown planner {other:?}"))),
    })
}

fn cmd_route(a: &RouteArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let map = load_map(&a.map)?;
    let g = graph_for(&map, a.epsilon)?;
    let route = plan_by_name(&a.planner, &g, a.from, a.to)?;
    let text = dataset::render_response(&route.cells, &route.rss_trace_dbm);
    writeln!(out, "{text}").ok();
    if let Some(path) = &a.svg {
        let mut spec = RenderSpec::new(&map);
        spec.routes.push(RouteOverlay {
            cells: route.cells,
            color: "red".into(),
            label: a.planner.clone(),
        });
        let svg = render_svg(&spec).map_err(|e| CliError::usage(e.to_string()))?;
        write_file(path, svg)?;
    }
    Ok(())
}

fn cmd_dataset(a: &DatasetArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(DatasetError::InvalidRatio(a.split).into());
    }
    let map = load_map(&a.map)?;
    let g = graph_for(&map, a.epsilon)?;
    let records = dataset::generate_dataset(&map, &g, a.n as usize, a.seed, a.min_separation, &a.template)?;
    let split = dataset::split_dataset(&records, a.split, a.seed)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::runtime(e.to_string()))?;
    let res = f64::from(map.resolution_m);
    for (name, recs) in [
        ("dataset.jsonl", &records),
        ("train.jsonl", &split.train),
        ("test.jsonl", &split.test),
    ] {
        let path = a.out_dir.join(name);
        write_file(&path, dataset::to_jsonl(recs, res))?;
        writeln!(out, "{}\t{}", path.display(), recs.len()).ok();
    }
    Ok(())
}

/// Parses the `--planner` value of `eval`.
pub fn parse_planner_spec(spec: &str, seed: u64, remote: Option<RemoteConfig>) -> Result<PlannerKind, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    Ok(match parts.as_slice() {
        ["oracle"] => PlannerKind::Oracle,
        ["shortest"] => PlannerKind::ShortestBaseline,
        ["greedy"] => PlannerKind::GreedyAlg1,
        ["mock"] | ["mock", "none"] => PlannerKind::Mock(Perturbation::None),
        ["mock", "empty"] => PlannerKind::Mock(Perturbation::Empty),
        ["mock", "corrupt", p] => {
            let p: f64 = p.parse().map_err(|_| format!("bad probability {p:?}"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("probability {p} outside [0, 1]"));
            }
            PlannerKind::Mock(Perturbation::Corrupt { seed, p })
        }
        ["mock", "detour", k] => {
            let k = k.parse().map_err(|_| format!("bad detour length {k:?}"))?;
            PlannerKind::Mock(Perturbation::Detour { seed, k })
        }
        ["remote"] => PlannerKind::Remote(remote.ok_or("remote planner needs --endpoint")?),
        _ => return Err(format!("unknown planner {spec:?}")),
    })
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let remote = a.endpoint.as_ref().map(|url| RemoteConfig {
        endpoint_url: url.clone(),
        model_name: a.model.clone(),
        timeout_ms: a.timeout_ms,
        max_retries: a.max_retries,
        auth_token_env_var: a.token_env.clone(),
        backoff_base_ms: a.backoff_ms,
    });
    if a.timeout_ms == 0 {
        return Err(CliError::usage("--timeout-ms must be positive"));
    }
    let kind = parse_planner_spec(&a.planner, a.seed, remote).map_err(CliError::usage)?;
    let map = load_map(&a.map)?;
    let g = graph_for(&map, a.epsilon)?;
    let (_, records) = dataset::read_jsonl(&a.test)?;
    let pairs: Vec<(CellId, CellId)> = records.iter().map(|r| (r.source, r.dest)).collect();
    let planner = GraphPlanner::new(&g, kind);
    let options = EvalOptions {
        lenient: a.lenient,
        concurrency: a.concurrency,
    };
    let report = evaluate_planner(&planner, &pairs, &g, &map, &options)?;
    for s in &report.skipped {
        log::warn!("skipped query {}: {}", s.index, s.reason);
    }
    if let Some(path) = &a.report {
        write_file(path, report.to_json())?;
    }
    write!(out, "{}", report.to_csv()).ok();
    Ok(())
}

fn parse_overlay(spec: &str) -> Result<(PathBuf, String, String), CliError> {
    let mut it = spec.splitn(3, ':');
    let file = it.next().filter(|f| !f.is_empty());
    let color = it.next().filter(|c| !c.is_empty());
    match (file, color) {
        (Some(f), Some(c)) => {
            let label = it.next().unwrap_or(f).to_string();
            Ok((PathBuf::from(f), c.to_string(), label))
        }
        _ => Err(CliError::usage(format!("--route expects FILE:COLOR[:LABEL], got {spec:?}"))),
    }
}

fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let map = load_map(&a.map)?;
    let mut spec = RenderSpec::new(&map);
    spec.cell_px = a.cell_px;
    spec.ramp = (a.dbm_min.unwrap_or(spec.ramp.0), a.dbm_max.unwrap_or(spec.ramp.1));
    for r in &a.routes {
        let (file, color, label) = parse_overlay(r)?;
        let parsed = parse_route_text(&read_file(&file)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", file.display())))?;
        spec.routes.push(RouteOverlay {
            cells: parsed.cells,
            color,
            label,
        });
    }
    let svg = render_svg(&spec).map_err(|e| CliError::usage(e.to_string()))?;
    write_file(&a.out, svg)?;
    writeln!(out, "{}", a.out.display()).ok();
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenEnv(a) => cmd_gen_env(a, out),
        Command::Coverage(a) => cmd_coverage(a, out),
        Command::Route(a) => cmd_route(a, out),
        Command::Dataset(a) => cmd_dataset(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Render(a) => cmd_render(a, out),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
/// Results go to `out`; diagnostics go to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
