//! Command-line interface: one subcommand per experiment or core operation.
//!
//! Every run resolves its parameters as defaults, overridden by an optional
//! JSON `--config` file, overridden by explicit flags. The effective
//! parameter set (minus the output path) is echoed into a `# config=` header
//! line of each output file, so any output regenerates bit-identically by
//! feeding that line back through `--config`.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::admission::{self, QueueParams};
use crate::coordination::{coordinated_field, Coordinator};
use crate::dynamics::{integrate_ode, simulate_sa, SaSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::estimation::{least_squares_fit, ConditionDb};
use crate::interference::{
    hexagonal_experiment, snapshot_instability, EqualizeOptions, HexagonalConfig, PoissonConfig,
    RadioParams,
};
use crate::io;
use crate::model::{make_linear_field, LinearSystem, ParamVector};
use crate::stability::eigen_stability;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser)]
#[command(
    name = "soncoord",
    version,
    about = "Stability analysis and coordination of parallel control loops",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stability verdicts for a linear system matrix.
    Stability {
        #[command(subcommand)]
        cmd: StabilityCmd,
    },
    /// Coordination-matrix synthesis.
    Coordinate {
        #[command(subcommand)]
        cmd: CoordinateCmd,
    },
    /// Trajectory generation (deterministic ODE or noisy discrete updates).
    Simulate {
        #[command(subcommand)]
        cmd: SimulateCmd,
    },
    /// Model identification from samples.
    Estimate {
        #[command(subcommand)]
        cmd: EstimateCmd,
    },
    /// Admission-control queue case study.
    Admission {
        #[command(subcommand)]
        cmd: AdmissionCmd,
    },
    /// Multi-cell interference case study.
    Interference {
        #[command(subcommand)]
        cmd: InterferenceCmd,
    },
}

#[derive(Subcommand)]
enum StabilityCmd {
    /// Eigenvalue test: prints the spectrum and the verdict.
    Check(StabilityCheckArgs),
}

#[derive(Subcommand)]
enum CoordinateCmd {
    /// Synthesize the gradient-flow coordinator C = -A^T W.
    Synth(CoordinateSynthArgs),
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Fixed-step RK4 integration of the linear field.
    Ode(SimulateOdeArgs),
    /// Stochastic approximation with a chosen update schedule.
    Sa(SimulateSaArgs),
}

#[derive(Subcommand)]
enum EstimateCmd {
    /// Least-squares fit of (A, b) from a sample CSV.
    Fit(EstimateFitArgs),
}

#[derive(Subcommand)]
enum AdmissionCmd {
    /// Stability-region scan over (x, b) operating points.
    Region(AdmissionRegionArgs),
}

#[derive(Subcommand)]
enum InterferenceCmd {
    /// Hexagonal-torus power-control trajectories.
    Hexa(InterferenceHexaArgs),
    /// Poisson snapshot instability-probability study.
    Poisson(InterferencePoissonArgs),
}

/// Entry point used by the binary and by tests; returns the process exit
/// code instead of exiting so callers stay in control.
pub fn dispatch<S: AsRef<str>>(argv: &[S]) -> i32 {
    let argv: Vec<String> = argv.iter().map(|s| s.as_ref().to_string()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stability {
            cmd: StabilityCmd::Check(args),
        } => stability_check(args),
        Command::Coordinate {
            cmd: CoordinateCmd::Synth(args),
        } => coordinate_synth(args),
        Command::Simulate {
            cmd: SimulateCmd::Ode(args),
        } => simulate_ode(args),
        Command::Simulate {
            cmd: SimulateCmd::Sa(args),
        } => simulate_sa_cmd(args),
        Command::Estimate {
            cmd: EstimateCmd::Fit(args),
        } => estimate_fit(args),
        Command::Admission {
            cmd: AdmissionCmd::Region(args),
        } => admission_region(args),
        Command::Interference {
            cmd: InterferenceCmd::Hexa(args),
        } => interference_hexa(args),
        Command::Interference {
            cmd: InterferenceCmd::Poisson(args),
        } => interference_poisson(args),
    }
}

// ---------------------------------------------------------------------------
// config plumbing

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                Error::Config(format!(
                    "{} at {}:{}:{}",
                    e,
                    p.display(),
                    e.line(),
                    e.column()
                ))
            })
        }
    }
}

fn config_json<T: Serialize>(params: &T) -> String {
    serde_json::to_string(params).expect("parameter structs serialize")
}

fn echo_header(subcommand: &str, params_json: &str) -> Vec<String> {
    vec![
        format!("soncoord {subcommand}"),
        format!("config={params_json}"),
    ]
}

/// Checks an output path is writable before any heavy compute runs.
fn check_writable(path: &Path) -> Result<()> {
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| {
            Error::InvalidArgument(format!("output path {} not writable: {e}", path.display()))
        })?;
    Ok(())
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "missing required parameter '{flag}' (flag or config)"
        ))
    })
}

/// Reads the `# soncoord <subcommand...>` tokens back out of an output file.
pub fn echoed_command(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .find_map(|l| l.strip_prefix("# soncoord "))
        .map(|rest| rest.split_whitespace().map(str::to_string).collect())
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "no '# soncoord' header line".into(),
        })
}

/// Reads the `# config=` JSON back out of an output file.
pub fn echoed_config(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .find_map(|l| l.strip_prefix("# config="))
        .map(str::to_string)
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "no '# config=' header line".into(),
        })
}

fn parse_number_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("expected a number, got '{tok}'")))
        })
        .collect()
}

/// Inclusive grid `start:end:step`.
fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "grid must be start:end:step, got '{spec}'"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad grid component '{p}'")))
        })
        .collect::<Result<_>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || end < start {
        return Err(Error::InvalidArgument(format!(
            "grid '{spec}' must have step > 0 and end >= start"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

// ---------------------------------------------------------------------------
// stability check

#[derive(Args)]
struct StabilityCheckArgs {
    /// Matrix CSV (row-major).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Optional verdict CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON parameter file; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct StabilityCheckParams {
    matrix: Option<String>,
}

fn stability_check(args: StabilityCheckArgs) -> Result<()> {
    let mut params: StabilityCheckParams = load_config(args.config.as_deref())?;
    if let Some(m) = args.matrix {
        params.matrix = Some(m.display().to_string());
    }
    let matrix_path = require(params.matrix.clone(), "matrix")?;
    if let Some(out) = &args.out {
        check_writable(out)?;
    }

    let a = io::load_matrix_csv(Path::new(&matrix_path))?;
    let verdict = eigen_stability(&a)?;
    for ev in &verdict.eigenvalues {
        println!("eigenvalue: {} {:+}i", ev.re, ev.im);
    }
    println!("margin: {}", verdict.margin);
    println!("verdict: {}", verdict.classification());
    println!(
        "stand-alone: {}",
        crate::stability::standalone_check(&a)
            .iter()
            .map(|s| if *s { "stable" } else { "unstable" })
            .collect::<Vec<_>>()
            .join(",")
    );

    if let Some(out) = &args.out {
        let mut text = String::new();
        for line in echo_header("stability check", &config_json(&params)) {
            let _ = writeln!(text, "# {line}");
        }
        text.push_str(&io::format_verdict_csv(&verdict));
        fs::write(out, text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// coordinate synth

#[derive(Args)]
struct CoordinateSynthArgs {
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Comma-separated positive weights (defaults to all ones).
    #[arg(long)]
    weights: Option<String>,
    /// Also run the eigenvalue test on C A and print the verdict.
    #[arg(long, action = ArgAction::SetTrue)]
    verify: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct CoordinateSynthParams {
    matrix: Option<String>,
    weights: Option<Vec<f64>>,
    verify: Option<bool>,
}

fn coordinate_synth(args: CoordinateSynthArgs) -> Result<()> {
    let mut params: CoordinateSynthParams = load_config(args.config.as_deref())?;
    if let Some(m) = args.matrix {
        params.matrix = Some(m.display().to_string());
    }
    if let Some(w) = args.weights {
        params.weights = Some(parse_number_list(&w)?);
    }
    if args.verify {
        params.verify = Some(true);
    }
    let matrix_path = require(params.matrix.clone(), "matrix")?;
    if let Some(out) = &args.out {
        check_writable(out)?;
    }

    let a = io::load_matrix_csv(Path::new(&matrix_path))?;
    let weights = match &params.weights {
        Some(w) => DVector::from_vec(w.clone()),
        None => DVector::from_element(a.nrows(), 1.0),
    };
    let coord = Coordinator::gradient_flow(&a, &weights)?;

    if params.verify.unwrap_or(false) {
        let verdict = crate::coordination::verify_coordinated(&coord, &a)?;
        println!("coordinated margin: {}", verdict.margin);
        println!("coordinated verdict: {}", verdict.classification());
    }

    if let Some(out) = &args.out {
        let mut comments = echo_header("coordinate synth", &config_json(&params));
        comments.push(format!("weights={}", weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")));
        io::save_coordinator_csv(out, &coord, &comments)?;
    } else {
        print!("{}", io::format_matrix_csv(coord.matrix()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate ode / sa

#[derive(Args)]
struct SimulateOdeArgs {
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    offset: Option<PathBuf>,
    /// Initial point, comma-separated.
    #[arg(long)]
    theta0: Option<String>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Apply gradient-flow coordination (unit weights) before integrating.
    #[arg(long, action = ArgAction::SetTrue)]
    coordinate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SimulateOdeParams {
    matrix: Option<String>,
    offset: Option<String>,
    theta0: Option<Vec<f64>>,
    step: Option<f64>,
    t_end: Option<f64>,
    coordinate: Option<bool>,
}

fn simulate_ode(args: SimulateOdeArgs) -> Result<()> {
    let mut params: SimulateOdeParams = load_config(args.config.as_deref())?;
    if let Some(m) = args.matrix {
        params.matrix = Some(m.display().to_string());
    }
    if let Some(o) = args.offset {
        params.offset = Some(o.display().to_string());
    }
    if let Some(t) = args.theta0 {
        params.theta0 = Some(parse_number_list(&t)?);
    }
    if let Some(s) = args.step {
        params.step = Some(s);
    }
    if let Some(t) = args.t_end {
        params.t_end = Some(t);
    }
    if args.coordinate {
        params.coordinate = Some(true);
    }
    let out = require(args.out, "out")?;
    check_writable(&out)?;
    let matrix_path = require(params.matrix.clone(), "matrix")?;
    let offset_path = require(params.offset.clone(), "offset")?;
    let theta0 = ParamVector::new(require(params.theta0.clone(), "theta0")?)?;
    let step = params.step.unwrap_or(1e-3);
    let t_end = params.t_end.unwrap_or(10.0);

    let a = io::load_matrix_csv(Path::new(&matrix_path))?;
    let b = io::load_vector_csv(Path::new(&offset_path))?;

    let traj = if params.coordinate.unwrap_or(false) {
        let coord = Coordinator::gradient_flow(&a, &DVector::from_element(a.nrows(), 1.0))?;
        let sys = LinearSystem::new(a, b)?;
        let field = coordinated_field(&coord, &sys)?;
        integrate_ode(&field, &theta0, step, t_end)?
    } else {
        let field = make_linear_field(a, b)?;
        integrate_ode(&field, &theta0, step, t_end)?
    };

    let comments = echo_header("simulate ode", &config_json(&params));
    io::save_trajectory_csv(&out, &traj, &comments)?;
    println!(
        "wrote {} samples to {}{}",
        traj.len(),
        out.display(),
        if traj.escaped { " (escaped)" } else { "" }
    );
    Ok(())
}

#[derive(Args)]
struct SimulateSaArgs {
    /// Field kind; only "linear" is defined.
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    offset: Option<PathBuf>,
    #[arg(long)]
    theta0: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Per-component Gaussian measurement-noise std.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// synchronous | round_robin | random_coordinate
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Apply gradient-flow coordination (unit weights) to the field.
    #[arg(long, action = ArgAction::SetTrue)]
    coordinate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SimulateSaParams {
    field: Option<String>,
    matrix: Option<String>,
    offset: Option<String>,
    theta0: Option<Vec<f64>>,
    epsilon: Option<f64>,
    noise: Option<f64>,
    steps: Option<usize>,
    schedule: Option<String>,
    seed: Option<u64>,
    coordinate: Option<bool>,
}

fn simulate_sa_cmd(args: SimulateSaArgs) -> Result<()> {
    let mut params: SimulateSaParams = load_config(args.config.as_deref())?;
    if let Some(f) = args.field {
        params.field = Some(f);
    }
    if let Some(m) = args.matrix {
        params.matrix = Some(m.display().to_string());
    }
    if let Some(o) = args.offset {
        params.offset = Some(o.display().to_string());
    }
    if let Some(t) = args.theta0 {
        params.theta0 = Some(parse_number_list(&t)?);
    }
    if let Some(e) = args.epsilon {
        params.epsilon = Some(e);
    }
    if let Some(n) = args.noise {
        params.noise = Some(n);
    }
    if let Some(s) = args.steps {
        params.steps = Some(s);
    }
    if let Some(s) = args.schedule {
        params.schedule = Some(s);
    }
    if let Some(s) = args.seed {
        params.seed = Some(s);
    }
    if args.coordinate {
        params.coordinate = Some(true);
    }
    let out = require(args.out, "out")?;
    check_writable(&out)?;

    let field_kind = params.field.clone().unwrap_or_else(|| "linear".into());
    if field_kind != "linear" {
        return Err(Error::InvalidArgument(format!(
            "unknown field kind '{field_kind}' (only 'linear' is defined)"
        )));
    }
    let matrix_path = require(params.matrix.clone(), "matrix")?;
    let offset_path = require(params.offset.clone(), "offset")?;
    let a = io::load_matrix_csv(Path::new(&matrix_path))?;
    let b = io::load_vector_csv(Path::new(&offset_path))?;
    let theta0 = match &params.theta0 {
        Some(t) => ParamVector::new(t.clone())?,
        None => ParamVector::zeros(a.nrows()),
    };
    let sched = SaSchedule {
        kind: params
            .schedule
            .clone()
            .unwrap_or_else(|| "synchronous".into())
            .parse::<ScheduleKind>()?,
        epsilon: params.epsilon.unwrap_or(0.01),
        noise_sigma: params.noise.unwrap_or(0.0),
        steps: params.steps.unwrap_or(10_000),
        seed: params.seed.unwrap_or(0),
    };

    let traj = if params.coordinate.unwrap_or(false) {
        let coord = Coordinator::gradient_flow(&a, &DVector::from_element(a.nrows(), 1.0))?;
        let sys = LinearSystem::new(a, b)?;
        let field = coordinated_field(&coord, &sys)?;
        simulate_sa(&field, &theta0, &sched)?
    } else {
        let field = make_linear_field(a, b)?;
        simulate_sa(&field, &theta0, &sched)?
    };

    let comments = echo_header("simulate sa", &config_json(&params));
    io::save_trajectory_csv(&out, &traj, &comments)?;
    println!(
        "wrote {} steps to {}{}",
        traj.len() - 1,
        out.display(),
        if traj.escaped { " (escaped)" } else { "" }
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate fit

#[derive(Args)]
struct EstimateFitArgs {
    /// Sample CSV with columns theta_1..theta_I,y_1..y_I.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Store the fit into this condition database under --label.
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct EstimateFitParams {
    samples: Option<String>,
    db: Option<String>,
    label: Option<String>,
}

fn estimate_fit(args: EstimateFitArgs) -> Result<()> {
    let mut params: EstimateFitParams = load_config(args.config.as_deref())?;
    if let Some(s) = args.samples {
        params.samples = Some(s.display().to_string());
    }
    if let Some(d) = args.db {
        params.db = Some(d.display().to_string());
    }
    if let Some(l) = args.label {
        params.label = Some(l);
    }
    let out = require(args.out, "out")?;
    check_writable(&out)?;
    let samples_path = require(params.samples.clone(), "samples")?;

    let samples = io::load_sample_set_csv(Path::new(&samples_path))?;
    let fit = least_squares_fit(&samples)?;

    let a_rows: Vec<Vec<f64>> = (0..fit.a.nrows())
        .map(|r| (0..fit.a.ncols()).map(|c| fit.a[(r, c)]).collect())
        .collect();
    let model = serde_json::json!({
        "config": serde_json::from_str::<serde_json::Value>(&config_json(&params)).unwrap(),
        "A": a_rows,
        "b": fit.b.iter().copied().collect::<Vec<f64>>(),
        "residual": fit.residual,
        "sample_count": samples.len() as u64,
    });
    fs::write(&out, serde_json::to_string_pretty(&model).unwrap())?;
    println!("fit residual {} written to {}", fit.residual, out.display());

    if let (Some(db_path), Some(label)) = (&params.db, &params.label) {
        let db_path = Path::new(db_path);
        let mut db = if db_path.exists() {
            ConditionDb::load(db_path)?
        } else {
            ConditionDb::new()
        };
        db.put(label, &fit.a, &fit.b, samples.len() as u64)?;
        db.save(db_path)?;
        println!("stored '{label}' in {}", db_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// admission region

#[derive(Args)]
struct AdmissionRegionArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "mean-size")]
    mean_size: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long = "rate-min")]
    rate_min: Option<f64>,
    #[arg(long)]
    xmax: Option<f64>,
    /// Resource grid start:end:step.
    #[arg(long = "x-grid")]
    x_grid: Option<String>,
    /// Threshold grid start:end:step.
    #[arg(long = "b-grid")]
    b_grid: Option<String>,
    #[arg(long)]
    sharpness: Option<f64>,
    /// Worker threads for the grid scan.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct AdmissionRegionParams {
    lambda: Option<f64>,
    mean_size: Option<f64>,
    rate: Option<f64>,
    rate_min: Option<f64>,
    xmax: Option<f64>,
    x_grid: Option<String>,
    b_grid: Option<String>,
    sharpness: Option<f64>,
    jobs: Option<usize>,
}

fn admission_region(args: AdmissionRegionArgs) -> Result<()> {
    let mut params: AdmissionRegionParams = load_config(args.config.as_deref())?;
    if let Some(v) = args.lambda {
        params.lambda = Some(v);
    }
    if let Some(v) = args.mean_size {
        params.mean_size = Some(v);
    }
    if let Some(v) = args.rate {
        params.rate = Some(v);
    }
    if let Some(v) = args.rate_min {
        params.rate_min = Some(v);
    }
    if let Some(v) = args.xmax {
        params.xmax = Some(v);
    }
    if let Some(v) = args.x_grid {
        params.x_grid = Some(v);
    }
    if let Some(v) = args.b_grid {
        params.b_grid = Some(v);
    }
    if let Some(v) = args.sharpness {
        params.sharpness = Some(v);
    }
    if let Some(v) = args.jobs {
        params.jobs = Some(v);
    }
    let out = require(args.out, "out")?;
    check_writable(&out)?;

    let queue = QueueParams::new(
        params.lambda.unwrap_or(0.5),
        params.mean_size.unwrap_or(10.0),
        params.rate.unwrap_or(15.0),
        params.rate_min.unwrap_or(2.0),
        params.xmax.unwrap_or(1.0),
    )?;
    let x_grid = parse_grid(params.x_grid.as_deref().unwrap_or("0.3:1:0.01"))?;
    let b_grid = parse_grid(params.b_grid.as_deref().unwrap_or("0:10:0.1"))?;
    let sharpness = params.sharpness.unwrap_or(1.0);
    let jobs = params.jobs.unwrap_or(1);

    let rows =
        admission::stability_region_scan_parallel(&queue, &x_grid, &b_grid, sharpness, jobs)?;

    let mut text = String::new();
    for line in echo_header("admission region", &config_json(&params)) {
        let _ = writeln!(text, "# {line}");
    }
    text.push_str("x,b,det,trace,max_re_eig,stable\n");
    for r in &rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.x, r.b, r.det, r.trace, r.max_re_eig, r.stable
        );
    }
    fs::write(&out, text)?;
    let unstable = rows.iter().filter(|r| !r.stable).count();
    println!(
        "scanned {} points ({} unstable) into {}",
        rows.len(),
        unstable,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// interference hexa / poisson

#[derive(Args)]
struct InterferenceHexaArgs {
    /// true applies C = -(JG)^T coordination, false runs the raw field.
    #[arg(long)]
    coordinated: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long = "n-samples")]
    n_samples: Option<usize>,
    #[arg(long = "n-bs")]
    n_bs: Option<usize>,
    /// Inter-site distance in km.
    #[arg(long)]
    isd: Option<f64>,
    /// Initial per-station perturbation amplitude in dB.
    #[arg(long = "perturb-db")]
    perturb_db: Option<f64>,
    /// Output prefix: writes <prefix>_powers.csv and <prefix>_coverage.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct InterferenceHexaParams {
    coordinated: Option<bool>,
    seed: Option<u64>,
    t_end: Option<f64>,
    step: Option<f64>,
    n_samples: Option<usize>,
    n_bs: Option<usize>,
    isd: Option<f64>,
    perturb_db: Option<f64>,
}

fn interference_hexa(args: InterferenceHexaArgs) -> Result<()> {
    let mut params: InterferenceHexaParams = load_config(args.config.as_deref())?;
    if let Some(v) = args.coordinated {
        params.coordinated = Some(v);
    }
    if let Some(v) = args.seed {
        params.seed = Some(v);
    }
    if let Some(v) = args.t_end {
        params.t_end = Some(v);
    }
    if let Some(v) = args.step {
        params.step = Some(v);
    }
    if let Some(v) = args.n_samples {
        params.n_samples = Some(v);
    }
    if let Some(v) = args.n_bs {
        params.n_bs = Some(v);
    }
    if let Some(v) = args.isd {
        params.isd = Some(v);
    }
    if let Some(v) = args.perturb_db {
        params.perturb_db = Some(v);
    }
    let prefix = require(args.out, "out")?;
    let powers_path = PathBuf::from(format!("{}_powers.csv", prefix.display()));
    let coverage_path = PathBuf::from(format!("{}_coverage.csv", prefix.display()));
    check_writable(&powers_path)?;
    check_writable(&coverage_path)?;

    let defaults = HexagonalConfig::default();
    let cfg = HexagonalConfig {
        coordinated: params.coordinated.unwrap_or(false),
        seed: params.seed.unwrap_or(defaults.seed),
        t_end: params.t_end.unwrap_or(defaults.t_end),
        step: params.step.unwrap_or(defaults.step),
        n_samples: params.n_samples.unwrap_or(defaults.n_samples),
        n_bs: params.n_bs.unwrap_or(defaults.n_bs),
        isd_km: params.isd.unwrap_or(defaults.isd_km),
        perturb_db: params.perturb_db.unwrap_or(defaults.perturb_db),
        ..defaults
    };
    let run = hexagonal_experiment(&cfg)?;

    let header = echo_header("interference hexa", &config_json(&params));
    let write_trace = |path: &Path, label: &str, rows: &[Vec<f64>]| -> Result<()> {
        let mut text = String::new();
        for line in &header {
            let _ = writeln!(text, "# {line}");
        }
        let _ = writeln!(
            text,
            "# p_star={} max_deviation_db={} within_ball={}",
            run.p_star[0], run.max_deviation_db, run.stayed_within_ball
        );
        text.push('t');
        for i in 1..=run.p_star.len() {
            let _ = write!(text, ",{label}_{i}");
        }
        text.push('\n');
        for (t, row) in run.times.iter().zip(rows) {
            let _ = write!(text, "{t}");
            for v in row {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
        fs::write(path, text)?;
        Ok(())
    };
    write_trace(&powers_path, "P", &run.powers)?;
    write_trace(&coverage_path, "G", &run.coverages)?;

    println!(
        "{}: max deviation {:.3} dB, {} the 3 dB ball; wrote {} and {}",
        if run.coordinated {
            "coordinated"
        } else {
            "uncoordinated"
        },
        run.max_deviation_db,
        if run.stayed_within_ball {
            "stayed inside"
        } else {
            "left"
        },
        powers_path.display(),
        coverage_path.display()
    );
    Ok(())
}

#[derive(Args)]
struct InterferencePoissonArgs {
    /// Stations per km².
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-samples")]
    n_samples: Option<usize>,
    /// Fixed equal-coverage target; omit to equalize to the level the
    /// geometry supports.
    #[arg(long)]
    target: Option<f64>,
    /// Area in km².
    #[arg(long)]
    area: Option<f64>,
    /// Worker threads; results are identical for any value.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct InterferencePoissonParams {
    density: Option<f64>,
    snapshots: Option<usize>,
    seed: Option<u64>,
    n_samples: Option<usize>,
    target: Option<f64>,
    area: Option<f64>,
    jobs: Option<usize>,
}

fn interference_poisson(args: InterferencePoissonArgs) -> Result<()> {
    let mut params: InterferencePoissonParams = load_config(args.config.as_deref())?;
    if let Some(v) = args.density {
        params.density = Some(v);
    }
    if let Some(v) = args.snapshots {
        params.snapshots = Some(v);
    }
    if let Some(v) = args.seed {
        params.seed = Some(v);
    }
    if let Some(v) = args.n_samples {
        params.n_samples = Some(v);
    }
    if let Some(v) = args.target {
        params.target = Some(v);
    }
    if let Some(v) = args.area {
        params.area = Some(v);
    }
    if let Some(v) = args.jobs {
        params.jobs = Some(v);
    }
    let out = require(args.out, "out")?;
    check_writable(&out)?;

    let defaults = PoissonConfig::default();
    let cfg = PoissonConfig {
        density_per_km2: require(params.density, "density")?,
        n_snapshots: params.snapshots.unwrap_or(defaults.n_snapshots),
        seed: params.seed.unwrap_or(defaults.seed),
        n_samples: params.n_samples.unwrap_or(defaults.n_samples),
        area_km2: params.area.unwrap_or(defaults.area_km2),
        equalize: EqualizeOptions {
            target: params.target,
            ..EqualizeOptions::default()
        },
        jobs: params.jobs.unwrap_or(1),
        radio: RadioParams::default(),
        jacobian_delta_db: defaults.jacobian_delta_db,
    };
    let report = snapshot_instability(&cfg)?;

    let mut text = String::new();
    for line in echo_header("interference poisson", &config_json(&params)) {
        let _ = writeln!(text, "# {line}");
    }
    let _ = writeln!(
        text,
        "# p_unstable={} converged={}/{}",
        report.p_unstable,
        report.n_converged,
        cfg.n_snapshots
    );
    text.push_str("snapshot_id,n_bs,converged,max_re_eig,unstable\n");
    for r in &report.rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            r.id, r.n_bs, r.converged, r.max_re_eig, r.unstable
        );
    }
    fs::write(&out, text)?;
    println!(
        "p_unstable = {} ({} unstable / {} converged) written to {}",
        report.p_unstable,
        report.n_unstable,
        report.n_converged,
        out.display()
    );
    Ok(())
}
