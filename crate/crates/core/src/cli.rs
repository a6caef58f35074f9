//! Command-line entry point tying the pipeline together: ingestion, LOCF
//! imputation, spatial and temporal fitting, prediction, heatmap rasters,
//! parametric bootstrap, forward selection, the distributed runtime, and
//! synthetic-data generation.
//!
//! Every flag can instead come from a `key = value` config file passed with
//! `--config`; explicit flags override config entries. All outputs are
//! written atomically (temp file in the target directory, then rename), and
//! all randomness flows from `--seed` (or the `SEPKRIG_SEED` environment
//! variable) — no command reads entropy from anywhere else.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acf::{parse_kv, SpatialAcfModel, SpatialFamily};
use crate::bootstrap::{bootstrap_standard_errors, simulate_dataset};
use crate::error::{Error, Result};
use crate::grid::{read_readings_csv, ObservationGrid, SensorLayout};
use crate::kriging::{
    predict_mean, predict_variance, FittedField, PredictionTarget, TemporalModel,
};
use crate::runtime::{run_distributed, RuntimeMode};
use crate::selection::{forward_select, Metric};
use crate::spatial_fit::{fit_spatial, sample_spatial_correlation};
use crate::temporal_fit::fit_seasonal_ar;
use crate::trend::{moving_average_trend, TrendEstimate};

/// Failures split by exit code: usage problems (1) versus domain errors
/// (2 for data, 3 for numerical, decided by [`Error::exit_code`]).
#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Lib(e) => e.exit_code(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses the command line and runs it; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(
    name = "sepkrig",
    version,
    about = "Separable spatio-temporal kriging for sensor networks"
)]
struct Cli {
    /// Config file with `key = value` lines mirroring the flag names;
    /// explicit flags override config entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for parallel sections (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project raw readings onto a regular frame grid
    Ingest(IngestArgs),
    /// Fill missing grid cells by carrying the last observation forward
    Impute(ImputeArgs),
    /// Fit a spatial correlation family to detrended residuals
    FitSpatial(FitSpatialArgs),
    /// Fit a multiplicative seasonal AR model to detrended residuals
    FitTemporal(FitTemporalArgs),
    /// Predict means and variances at target locations
    Predict(PredictArgs),
    /// Raster of predicted means over the layout bounding box (CSV + PGM)
    Heatmap(HeatmapArgs),
    /// Parametric-bootstrap standard errors for the fitted parameters
    Bootstrap(BootstrapArgs),
    /// Greedy forward sensor selection under an interpolation metric
    Select(SelectArgs),
    /// Distributed runtime: per-sensor forecasters, central interpolator
    Run(RunArgs),
    /// Simulate a synthetic observation grid from fitted models
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Readings CSV with columns sensor_id,timestamp,value
    #[arg(long)]
    readings: Option<PathBuf>,
    /// Layout CSV with columns sensor_id,x,y
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Frame length in seconds
    #[arg(long)]
    step: Option<f64>,
    /// Output grid CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Distance-override CSV with columns sensor_a,sensor_b,distance
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitSpatialArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Correlation family: exp, gauss, powerexp or matern
    #[arg(long)]
    family: Option<String>,
    /// Output model file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trend window in frames (default: one day of frames)
    #[arg(long)]
    window: Option<usize>,
    /// Multi-start count for the optimizer
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
    /// Fit report destination (default: stdout)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FitTemporalArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Comma-separated structural lags, in frames (or in seconds when
    /// --step-seconds is given)
    #[arg(long)]
    lags: Option<String>,
    /// Output model file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trend window in frames (default: one day of frames)
    #[arg(long)]
    window: Option<usize>,
    /// Interpret --lags in seconds, with this many seconds per frame
    #[arg(long)]
    step_seconds: Option<f64>,
    /// Fit report destination (default: stdout)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Spatial model file
    #[arg(long)]
    spatial: Option<PathBuf>,
    /// Temporal model file
    #[arg(long)]
    temporal: Option<PathBuf>,
    /// Targets CSV with columns x,y
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Frames past the end of the grid (0 = interpolate the last frame)
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    spatial: Option<PathBuf>,
    #[arg(long)]
    temporal: Option<PathBuf>,
    /// Raster size as ROWSxCOLS, e.g. 40x60
    #[arg(long)]
    resolution: Option<String>,
    /// Output raster CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output graymap (default: the CSV path with extension .pgm)
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    spatial: Option<PathBuf>,
    #[arg(long)]
    temporal: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, env = "SEPKRIG_SEED")]
    seed: Option<u64>,
    /// Output report CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    /// Frames per replicate (default: as many as the grid has)
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    spatial: Option<PathBuf>,
    /// Selection metric: mae or p95
    #[arg(long)]
    metric: Option<String>,
    /// Number of sensors to select
    #[arg(long)]
    max_k: Option<usize>,
    /// Output trace CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step candidate-score CSV (default: trace path with _scores suffix)
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    spatial: Option<PathBuf>,
    /// Shared temporal model file
    #[arg(long)]
    temporal: Option<PathBuf>,
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Forecast frames (at least 1)
    #[arg(long)]
    horizon: Option<usize>,
    /// shared or per-sensor
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay log of every forecast message, one CSV row each
    #[arg(long)]
    messages: Option<PathBuf>,
    /// Directory of <sensor_id>.model files for per-sensor mode
    #[arg(long)]
    per_sensor_dir: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    spatial: Option<PathBuf>,
    #[arg(long)]
    temporal: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, env = "SEPKRIG_SEED")]
    seed: Option<u64>,
    /// Output grid CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Constant trend level of the simulated field
    #[arg(long)]
    level: Option<f64>,
    /// Residual scale of the simulated field
    #[arg(long)]
    sigma: Option<f64>,
    /// Frame length in seconds of the simulated grid
    #[arg(long)]
    step: Option<f64>,
    /// Timestamp of the first frame
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    distance_overrides: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// config file

struct Config {
    kv: Vec<(String, String)>,
    path: PathBuf,
}

impl Config {
    fn empty() -> Self {
        Config { kv: Vec::new(), path: PathBuf::new() }
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Config { kv: parse_kv(&text, path)?, path: path.to_path_buf() })
    }

    /// Last occurrence wins, so later lines override earlier ones.
    fn get(&self, key: &str) -> Option<&str> {
        self.kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Flag value if given, else the config entry of the same name.
fn resolve<T: FromStr>(flag: Option<T>, cfg: &Config, key: &str) -> CliResult<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|_| {
            Failure::Usage(format!(
                "config {}: key {key:?}: cannot parse value {raw:?}",
                cfg.path.display()
            ))
        }),
    }
}

/// The trend window also answers to the config key `trend.window_frames`.
fn resolve_window(flag: Option<usize>, cfg: &Config) -> CliResult<Option<usize>> {
    match resolve(flag, cfg, "window")? {
        Some(w) => Ok(Some(w)),
        None => resolve(None, cfg, "trend.window_frames"),
    }
}

fn required<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| {
        Failure::Usage(format!("missing --{key} (no flag and no config entry {key:?})"))
    })
}

// ---------------------------------------------------------------------------
// shared plumbing

/// Writes through a temp file in the destination directory plus a rename, so
/// readers never observe a half-written artifact.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn load_layout(path: &Path, overrides: Option<&Path>) -> Result<SensorLayout> {
    let mut layout = SensorLayout::read_csv(path)?;
    if let Some(o) = overrides {
        layout.read_distance_overrides(o)?;
    }
    Ok(layout)
}

/// Default trend window: one day of frames at the grid's sampling step.
fn default_window(step: f64) -> usize {
    (86400.0 / step).round().max(1.0) as usize
}

fn build_trend(grid: &ObservationGrid, window: Option<usize>) -> Result<TrendEstimate> {
    moving_average_trend(grid, window.unwrap_or_else(|| default_window(grid.step())))
}

/// Raster dimensions given as ROWSxCOLS.
fn parse_resolution(s: &str) -> CliResult<(usize, usize)> {
    let bad = || {
        Failure::Usage(format!(
            "resolution must be ROWSxCOLS with both positive, e.g. 40x60, got {s:?}"
        ))
    };
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let rows: usize = r.trim().parse().map_err(|_| bad())?;
    let cols: usize = c.trim().parse().map_err(|_| bad())?;
    if rows == 0 || cols == 0 {
        return Err(bad());
    }
    Ok((rows, cols))
}

/// Comma-separated lag list. Lags are frame counts unless `step_seconds` is
/// given, in which case they are seconds and must be whole multiples of it.
fn parse_lags(list: &str, step_seconds: Option<f64>) -> CliResult<Vec<usize>> {
    if let Some(s) = step_seconds {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Failure::Usage(format!("--step-seconds must be positive, got {s}")));
        }
    }
    let mut lags = Vec::new();
    for item in list.split(',') {
        let item = item.trim();
        let value: f64 = item.parse().map_err(|_| {
            Failure::Usage(format!("lag {item:?} is not a number"))
        })?;
        let frames = match step_seconds {
            Some(s) => {
                let f = value / s;
                if (f - f.round()).abs() > 1e-9 || f.round() < 1.0 {
                    return Err(Failure::Usage(format!(
                        "lag {item} seconds is not a positive whole number of {s}-second frames"
                    )));
                }
                f.round() as usize
            }
            None => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Failure::Usage(format!(
                        "lag {item:?} must be a positive whole frame count"
                    )));
                }
                value as usize
            }
        };
        lags.push(frames);
    }
    if lags.is_empty() {
        return Err(Failure::Usage("the lag list is empty".into()));
    }
    Ok(lags)
}

/// Targets CSV: one `x,y` pair per line; a single leading header line is
/// allowed.
fn read_targets(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut targets = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parsed = match (parts.next(), parts.next(), parts.next()) {
            (Some(x), Some(y), None) => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((x, y)) => targets.push([x, y]),
            None if lineno == 0 => continue, // header
            None => {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected `x,y`, got {raw:?}", lineno + 1),
                ))
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: no target coordinates found",
            path.display()
        )));
    }
    Ok(targets)
}

/// Absolute frame index of prediction row `k`: with horizon 0 the last
/// observed frame is re-predicted, otherwise rows count past the grid end.
fn prediction_frame(n_frames: usize, horizon: usize, k: usize) -> usize {
    if horizon == 0 {
        n_frames - 1
    } else {
        n_frames + k
    }
}

// ---------------------------------------------------------------------------
// dispatch

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::empty(),
    };
    if let Some(n) = resolve(cli.workers, &cfg, "workers")? {
        // ignore failure: the global pool can only be sized once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a, &cfg),
        Command::Impute(a) => cmd_impute(a, &cfg),
        Command::FitSpatial(a) => cmd_fit_spatial(a, &cfg),
        Command::FitTemporal(a) => cmd_fit_temporal(a, &cfg),
        Command::Predict(a) => cmd_predict(a, &cfg),
        Command::Heatmap(a) => cmd_heatmap(a, &cfg),
        Command::Bootstrap(a) => cmd_bootstrap(a, &cfg),
        Command::Select(a) => cmd_select(a, &cfg),
        Command::Run(a) => cmd_run(a, &cfg),
        Command::Simulate(a) => cmd_simulate(a, &cfg),
    }
}

fn cmd_ingest(a: IngestArgs, cfg: &Config) -> CliResult<()> {
    let readings_path = required(resolve(a.readings, cfg, "readings")?, "readings")?;
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let step = required(resolve(a.step, cfg, "step")?, "step")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;

    let layout = load_layout(&layout_path, overrides.as_deref())?;
    let readings = read_readings_csv(&readings_path)?;
    let grid = ObservationGrid::project_to_grid(&readings, &layout, step)?;
    let missing = grid.missing().iter().filter(|&&m| m).count();
    write_atomic(&out, &grid.to_csv_string())?;
    eprintln!(
        "projected {} readings onto {} frames x {} sensors ({} missing cells)",
        readings.len(),
        grid.n_frames(),
        grid.n_sensors(),
        missing
    );
    Ok(())
}

fn cmd_impute(a: ImputeArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let grid = ObservationGrid::read_csv(&grid_path)?;
    let before = grid.missing().iter().filter(|&&m| m).count();
    let imputed = grid.locf_impute()?;
    write_atomic(&out, &imputed.to_csv_string())?;
    eprintln!("imputed {before} missing cells");
    Ok(())
}

fn cmd_fit_spatial(a: FitSpatialArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let family_name = required(resolve(a.family, cfg, "family")?, "family")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let window = resolve_window(a.window, cfg)?;
    let starts = resolve(a.starts, cfg, "starts")?.unwrap_or(8);
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;
    let report_path = resolve(a.report, cfg, "report")?;

    let family = SpatialFamily::parse(&family_name)?;
    let grid = ObservationGrid::read_csv(&grid_path)?;
    let layout = load_layout(&layout_path, overrides.as_deref())?;
    grid.check_layout(&layout)?;
    let trend = build_trend(&grid, window)?;
    let sample = sample_spatial_correlation(&grid, &trend)?;
    let fit = fit_spatial(family, layout.dist(), &sample, starts)?;

    write_atomic(&out, &fit.model.to_kv())?;
    let mut report = fit.model.to_kv();
    report.push_str(&format!(
        "loglik = {}\ngradient_norm = {}\nconverged = {}\niterations = {}\nframes_used = {}\nat_bound = {}\n",
        fit.loglik,
        fit.gradient_norm,
        fit.converged,
        fit.iterations,
        sample.frames_used(),
        fit.at_bound.join(",")
    ));
    match report_path {
        Some(p) => write_atomic(&p, &report)?,
        None => print!("{report}"),
    }
    if !fit.converged {
        eprintln!("warning: the spatial fit did not meet the convergence criteria");
    }
    Ok(())
}

fn cmd_fit_temporal(a: FitTemporalArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let lag_list = required(resolve(a.lags, cfg, "lags")?, "lags")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let window = resolve_window(a.window, cfg)?;
    let step_seconds = resolve(a.step_seconds, cfg, "step-seconds")?;
    let report_path = resolve(a.report, cfg, "report")?;

    let lags = parse_lags(&lag_list, step_seconds)?;
    let grid = ObservationGrid::read_csv(&grid_path)?;
    if let Some(s) = step_seconds {
        if (s - grid.step()).abs() > 1e-9 {
            eprintln!(
                "warning: --step-seconds {s} differs from the grid step {}",
                grid.step()
            );
        }
    }
    let trend = build_trend(&grid, window)?;
    let residuals = trend.residuals(&grid)?;
    let fit = fit_seasonal_ar(&residuals, &lags)?;

    write_atomic(&out, &fit.model.to_kv())?;
    let mut report = fit.model.to_kv();
    report.push_str(&format!(
        "converged = {}\nsweeps = {}\nframes_used = {}\n",
        fit.converged,
        fit.sweeps,
        residuals.nrows()
    ));
    match report_path {
        Some(p) => write_atomic(&p, &report)?,
        None => print!("{report}"),
    }
    if !fit.converged {
        eprintln!("warning: the temporal fit did not meet the convergence criteria");
    }
    Ok(())
}

/// Loads grid, layout, models, and trend — the prelude shared by predict,
/// heatmap, and run.
#[allow(clippy::too_many_arguments)]
fn load_field(
    grid_path: &Path,
    layout_path: &Path,
    spatial_path: &Path,
    temporal_path: &Path,
    overrides: Option<&Path>,
    window: Option<usize>,
) -> Result<(ObservationGrid, SensorLayout, FittedField)> {
    let grid = ObservationGrid::read_csv(grid_path)?;
    let layout = load_layout(layout_path, overrides)?;
    grid.check_layout(&layout)?;
    let spatial = SpatialAcfModel::read_file(spatial_path)?;
    let temporal = TemporalModel::read_file(temporal_path)?;
    let trend = build_trend(&grid, window)?;
    Ok((grid, layout, FittedField { trend, spatial, temporal }))
}

fn cmd_predict(a: PredictArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let spatial_path = required(resolve(a.spatial, cfg, "spatial")?, "spatial")?;
    let temporal_path = required(resolve(a.temporal, cfg, "temporal")?, "temporal")?;
    let targets_path = required(resolve(a.targets, cfg, "targets")?, "targets")?;
    let horizon = resolve(a.horizon, cfg, "horizon")?.unwrap_or(0);
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let window = resolve_window(a.window, cfg)?;
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;

    let (grid, layout, field) = load_field(
        &grid_path,
        &layout_path,
        &spatial_path,
        &temporal_path,
        overrides.as_deref(),
        window,
    )?;
    let target = PredictionTarget::new(read_targets(&targets_path)?, horizon)?;
    let result = predict_mean(&field, &grid, &layout, &target)?;
    let variance = match predict_variance(&field, &grid, &layout, &target) {
        Ok(v) => Some(v),
        Err(Error::Unsupported(msg)) => {
            eprintln!("warning: variance column left empty: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };

    let sums: Vec<f64> = (0..result.weights.nrows())
        .map(|p| result.weights.row(p).iter().sum())
        .collect();
    let lo = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    eprintln!("spatial weight row sums in [{lo}, {hi}] over {} targets", sums.len());

    let mut text = String::from("frame,target_index,mean,variance\n");
    for k in 0..result.mean.nrows() {
        let frame = prediction_frame(grid.n_frames(), horizon, k);
        for p in 0..result.mean.ncols() {
            text.push_str(&format!("{frame},{p},{}", result.mean[(k, p)]));
            match &variance {
                Some(v) => text.push_str(&format!(",{}\n", v[(k, p)])),
                None => text.push_str(",\n"),
            }
        }
    }
    write_atomic(&out, &text)?;
    Ok(())
}

fn cmd_heatmap(a: HeatmapArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let spatial_path = required(resolve(a.spatial, cfg, "spatial")?, "spatial")?;
    let temporal_path = required(resolve(a.temporal, cfg, "temporal")?, "temporal")?;
    let resolution = required(resolve(a.resolution, cfg, "resolution")?, "resolution")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let horizon = resolve(a.horizon, cfg, "horizon")?.unwrap_or(0);
    let window = resolve_window(a.window, cfg)?;
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;

    let (rows, cols) = parse_resolution(&resolution)?;
    let image = resolve(a.image, cfg, "image")?
        .unwrap_or_else(|| out.with_extension("pgm"));

    let (grid, layout, field) = load_field(
        &grid_path,
        &layout_path,
        &spatial_path,
        &temporal_path,
        overrides.as_deref(),
        window,
    )?;

    // cell centers over the layout bounding box, top row first
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in layout.coords() {
        xmin = xmin.min(c[0]);
        xmax = xmax.max(c[0]);
        ymin = ymin.min(c[1]);
        ymax = ymax.max(c[1]);
    }
    let xs: Vec<f64> =
        (0..cols).map(|j| xmin + (j as f64 + 0.5) * (xmax - xmin) / cols as f64).collect();
    let ys: Vec<f64> =
        (0..rows).map(|i| ymax - (i as f64 + 0.5) * (ymax - ymin) / rows as f64).collect();
    let mut locations = Vec::with_capacity(rows * cols);
    for &y in &ys {
        for &x in &xs {
            locations.push([x, y]);
        }
    }

    let target = PredictionTarget::new(locations, horizon)?;
    let result = predict_mean(&field, &grid, &layout, &target)?;
    let last = result.mean.row(result.mean.nrows() - 1).into_owned();

    let mut text = String::from("y/x");
    for x in &xs {
        text.push_str(&format!(",{x}"));
    }
    text.push('\n');
    for (i, y) in ys.iter().enumerate() {
        text.push_str(&format!("{y}"));
        for j in 0..cols {
            text.push_str(&format!(",{}", last[i * cols + j]));
        }
        text.push('\n');
    }
    write_atomic(&out, &text)?;

    let lo = last.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut pgm = format!("P2\n# predicted mean: gray 0 = {lo}, gray 255 = {hi}\n{cols} {rows}\n255\n");
    for i in 0..rows {
        for j in 0..cols {
            let v = last[i * cols + j];
            let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u32 } else { 128 };
            if j > 0 {
                pgm.push(' ');
            }
            pgm.push_str(&g.to_string());
        }
        pgm.push('\n');
    }
    write_atomic(&image, &pgm)?;
    eprintln!(
        "rasterized {}x{} cells over [{xmin}, {xmax}] x [{ymin}, {ymax}], means in [{lo}, {hi}]",
        rows, cols
    );
    Ok(())
}

fn cmd_bootstrap(a: BootstrapArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let spatial_path = required(resolve(a.spatial, cfg, "spatial")?, "spatial")?;
    let temporal_path = required(resolve(a.temporal, cfg, "temporal")?, "temporal")?;
    let replicates = required(resolve(a.replicates, cfg, "replicates")?, "replicates")?;
    let seed = required(resolve(a.seed, cfg, "seed")?, "seed")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let window = resolve_window(a.window, cfg)?;
    let frames = resolve(a.frames, cfg, "frames")?;
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;

    let (grid, layout, field) = load_field(
        &grid_path,
        &layout_path,
        &spatial_path,
        &temporal_path,
        overrides.as_deref(),
        window,
    )?;
    let frames = frames.unwrap_or_else(|| grid.n_frames());
    let report = bootstrap_standard_errors(&field, &layout, frames, replicates, seed)?;

    let mut text = String::from("parameter,estimate,std_err,q025,q975\n");
    for p in &report.params {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            p.name, p.estimate, p.std_err, p.q025, p.q975
        ));
    }
    write_atomic(&out, &text)?;
    eprintln!(
        "{} replicates ({} failed{}), base seed {}",
        report.replicates,
        report.failures,
        if report.unreliable { "; report flagged unreliable" } else { "" },
        report.base_seed
    );
    Ok(())
}

fn cmd_select(a: SelectArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let spatial_path = required(resolve(a.spatial, cfg, "spatial")?, "spatial")?;
    let metric_name = required(resolve(a.metric, cfg, "metric")?, "metric")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let window = resolve_window(a.window, cfg)?;
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;

    let metric = Metric::parse(&metric_name)?;
    let grid = ObservationGrid::read_csv(&grid_path)?;
    let layout = load_layout(&layout_path, overrides.as_deref())?;
    grid.check_layout(&layout)?;
    let max_k = resolve(a.max_k, cfg, "max-k")?.unwrap_or(layout.len().saturating_sub(1));
    let scores_path = resolve(a.scores, cfg, "scores")?.unwrap_or_else(|| {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
        out.with_file_name(format!("{stem}_scores.csv"))
    });

    let trend = build_trend(&grid, window)?;
    let spatial = SpatialAcfModel::read_file(&spatial_path)?;
    // selection interpolates within frames, so the temporal model is unused;
    // a white-noise stand-in keeps the field type complete
    let temporal = TemporalModel::from_kv(
        "kind = ar1\ncoefficient = 0\nnugget = 0\n",
        Path::new("<builtin>"),
    )?;
    let field = FittedField { trend, spatial, temporal };
    let trace = forward_select(&grid, &layout, &field, metric, max_k)?;

    let mut text = String::from("step,added,active_set,score\n");
    for (i, step) in trace.steps.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            step.added,
            step.active.join(";"),
            step.score
        ));
    }
    write_atomic(&out, &text)?;

    let mut scores = String::from("step,candidate,score\n");
    for (i, step) in trace.steps.iter().enumerate() {
        for (id, score) in &step.candidate_scores {
            scores.push_str(&format!("{},{},{}\n", i + 1, id, score));
        }
    }
    write_atomic(&scores_path, &scores)?;
    for step in &trace.steps {
        eprintln!("step {}: added {} ({} = {})", step.active.len(), step.added, metric, step.score);
    }
    Ok(())
}

fn cmd_run(a: RunArgs, cfg: &Config) -> CliResult<()> {
    let grid_path = required(resolve(a.grid, cfg, "grid")?, "grid")?;
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let spatial_path = required(resolve(a.spatial, cfg, "spatial")?, "spatial")?;
    let temporal_path = required(resolve(a.temporal, cfg, "temporal")?, "temporal")?;
    let targets_path = required(resolve(a.targets, cfg, "targets")?, "targets")?;
    let horizon = required(resolve(a.horizon, cfg, "horizon")?, "horizon")?;
    let mode_name = required(resolve(a.mode, cfg, "mode")?, "mode")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let messages_path = resolve(a.messages, cfg, "messages")?;
    let per_sensor_dir = resolve(a.per_sensor_dir, cfg, "per-sensor-dir")?;
    let window = resolve_window(a.window, cfg)?;
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;

    let (grid, layout, field) = load_field(
        &grid_path,
        &layout_path,
        &spatial_path,
        &temporal_path,
        overrides.as_deref(),
        window,
    )?;
    let mode = match mode_name.as_str() {
        "shared" => RuntimeMode::Shared,
        "per-sensor" => {
            let dir = required(per_sensor_dir, "per-sensor-dir")?;
            let mut models = Vec::with_capacity(layout.len());
            for id in layout.sensor_ids() {
                let path = dir.join(format!("{id}.model"));
                if !path.is_file() {
                    return Err(Failure::Usage(format!(
                        "per-sensor mode: no model file for sensor {id} at {}",
                        path.display()
                    )));
                }
                models.push(TemporalModel::read_file(&path)?);
            }
            RuntimeMode::PerSensor(models)
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown mode {other:?} (expected shared or per-sensor)"
            )))
        }
    };

    let target = PredictionTarget::new(read_targets(&targets_path)?, horizon)?;
    let run = run_distributed(&field, &grid, &layout, &target, &mode, None)?;

    let mut text = String::from("frame,target_index,mean\n");
    for k in 0..run.mean.nrows() {
        let frame = prediction_frame(grid.n_frames(), horizon, k);
        for p in 0..run.mean.ncols() {
            text.push_str(&format!("{frame},{p},{}\n", run.mean[(k, p)]));
        }
    }
    write_atomic(&out, &text)?;

    if let Some(path) = messages_path {
        let mut text = String::new();
        for m in &run.messages {
            text.push_str(&m.to_csv_row());
            text.push('\n');
        }
        write_atomic(&path, &text)?;
    }
    eprintln!(
        "assembled {} forecast messages into {} frames x {} targets",
        run.messages.len(),
        run.mean.nrows(),
        run.mean.ncols()
    );
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, cfg: &Config) -> CliResult<()> {
    let layout_path = required(resolve(a.layout, cfg, "layout")?, "layout")?;
    let spatial_path = required(resolve(a.spatial, cfg, "spatial")?, "spatial")?;
    let temporal_path = required(resolve(a.temporal, cfg, "temporal")?, "temporal")?;
    let frames = required(resolve(a.frames, cfg, "frames")?, "frames")?;
    let seed = required(resolve(a.seed, cfg, "seed")?, "seed")?;
    let out = required(resolve(a.out, cfg, "out")?, "out")?;
    let level = resolve(a.level, cfg, "level")?.unwrap_or(20.0);
    let sigma = resolve(a.sigma, cfg, "sigma")?.unwrap_or(1.0);
    let step = resolve(a.step, cfg, "step")?.unwrap_or(60.0);
    let start = resolve(a.start, cfg, "start")?.unwrap_or(0.0);
    let overrides = resolve(a.distance_overrides, cfg, "distance-overrides")?;

    let layout = load_layout(&layout_path, overrides.as_deref())?;
    let spatial = SpatialAcfModel::read_file(&spatial_path)?;
    let temporal = TemporalModel::read_file(&temporal_path)?;
    let trend = TrendEstimate::constant(level, frames, sigma)?;
    let field = FittedField { trend, spatial, temporal };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = simulate_dataset(&field, &layout, frames, start, step, &mut rng)?;
    write_atomic(&out, &grid.to_csv_string())?;
    eprintln!(
        "simulated {} frames x {} sensors with seed {seed}",
        grid.n_frames(),
        grid.n_sensors()
    );
    Ok(())
}
