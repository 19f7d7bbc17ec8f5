//! `overtake-lab`: simulate, extract, calibrate, fit, eval and decide.
//!
//! Exit codes: 0 on success (and Safe for `decide`), 2 when `decide`
//! returns Unsafe, 1 on any error or usage problem.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use overtake_core::avoidance::{decide, DecisionConfig, TrafficSnapshot, Verdict};
use overtake_core::fit::{fit_aft, FitOptions, GradientMode};
use overtake_core::geometry::CameraModel;
use overtake_core::io;
use overtake_core::maneuver::{analyze, ManeuverRecord, SegmentationConfig};
use overtake_core::sim::{add_gps_noise, run_scenario, ScenarioSpec};
use overtake_core::survival::{CovariateVector, LogLogisticAft, Parameterization};

/// Built-in name for [`LogLogisticAft::reference_table`].
const REFERENCE_MODEL: &str = "paper-table";

#[derive(Parser, Debug)]
#[command(name = "overtake-lab", version, about = "Motorcycle overtaking-duration modelling and advisory tools")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Seed for every random draw; overrides the scenario's own seed.
    #[arg(long, global = true, env = "OVERTAKE_LAB_SEED")]
    seed: Option<u64>,

    /// Print progress details to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write its traces as CSV.
    Simulate(SimulateArgs),
    /// Segment overtakes in trace files and write their variable records.
    Extract(ExtractArgs),
    /// Report the camera's distance MAPE over calibration sessions.
    Calibrate(CalibrateArgs),
    /// Fit the duration model to observations.
    Fit(FitArgs),
    /// Evaluate a model at one covariate vector and time.
    Eval(EvalArgs),
    /// Decide whether an overtake is safe for a traffic snapshot.
    Decide(DecideArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_traces: PathBuf,
    /// Ground-truth phases and record as JSON.
    #[arg(long)]
    out_truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Trace CSV; repeat for several maneuvers.
    #[arg(long, required = true)]
    traces: Vec<PathBuf>,
    /// Maneuver records JSON (one entry per trace file).
    #[arg(long)]
    out: PathBuf,
    /// Observation CSV of the maneuvers usable for fitting.
    #[arg(long)]
    out_observations: Option<PathBuf>,
    #[arg(long, default_value = "ego")]
    ego: String,
    #[arg(long, default_value_t = 4.0)]
    lane_width: f64,
    /// Moving-average window in seconds for noisy traces; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Calibration CSV: session,target_m,y_f_px,x_offset_px.
    #[arg(long)]
    calib: PathBuf,
    /// Camera JSON: c_px, y1_m, y_g_px.
    #[arg(long)]
    camera: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Scaled,
    Standard,
}

impl From<ModeArg> for Parameterization {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Scaled => Parameterization::ScaledLocation,
            ModeArg::Standard => Parameterization::StandardAft,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Observation CSV: duration_s,ud_m,pd_m,dab_kmh,multiple.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "scaled")]
    mode: ModeArg,
    /// Gradient max-norm tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Use finite-difference gradients instead of analytic ones.
    #[arg(long)]
    numeric_gradient: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model JSON path, or `paper-table` for the built-in reference model.
    #[arg(long)]
    model: String,
    /// e.g. "ud=7,pd=8.3,dab=20.3,multiple=0".
    #[arg(long)]
    covariates: String,
    /// Time in seconds.
    #[arg(long)]
    t: f64,
}

#[derive(Args, Debug)]
struct DecideArgs {
    #[arg(long)]
    snapshot: PathBuf,
    /// Model JSON path, or `paper-table` for the built-in reference model.
    #[arg(long)]
    model: String,
    #[arg(long)]
    time_threshold: Option<f64>,
    #[arg(long)]
    distance_threshold: Option<f64>,
    #[arg(long)]
    risk_tolerance: Option<f64>,
    #[arg(long)]
    time_margin: Option<f64>,
    /// Also write the decision JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let verbose = cli.verbose > 0;
    match cli.command {
        Command::Simulate(a) => simulate(a, cli.seed, verbose),
        Command::Extract(a) => extract(a, verbose),
        Command::Calibrate(a) => calibrate(a),
        Command::Fit(a) => fit(a, verbose),
        Command::Eval(a) => eval(a),
        Command::Decide(a) => decide_cmd(a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

/// Outputs must not overwrite any input and must have an existing parent.
fn check_output(out: &Path, inputs: &[&Path]) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            bail!("output directory {} does not exist", parent.display());
        }
    }
    let same = |a: &Path, b: &Path| match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    };
    if let Some(input) = inputs.iter().find(|i| same(out, i)) {
        bail!("refusing to overwrite input file {}", input.display());
    }
    Ok(())
}

fn load_model(spec: &str) -> Result<LogLogisticAft> {
    if spec == REFERENCE_MODEL {
        return Ok(LogLogisticAft::reference_table());
    }
    let path = Path::new(spec);
    require_file(path)?;
    let doc = io::load_model(path).with_context(|| format!("reading model {spec}"))?;
    Ok(doc.model()?)
}

fn model_inputs(spec: &str) -> Vec<&Path> {
    if spec == REFERENCE_MODEL {
        Vec::new()
    } else {
        vec![Path::new(spec)]
    }
}

fn simulate(a: SimulateArgs, seed: Option<u64>, verbose: bool) -> Result<u8> {
    require_file(&a.spec)?;
    check_output(&a.out_traces, &[&a.spec])?;
    if let Some(t) = &a.out_truth {
        check_output(t, &[&a.spec, &a.out_traces])?;
    }
    let spec: ScenarioSpec = io::read_json(&a.spec, "scenario JSON")?;
    let out = run_scenario(&spec)?;
    let seed = seed.unwrap_or(spec.seed);
    let traces = match spec.gps_noise {
        Some(n) => add_gps_noise(&out.traces, n.sigma_pos, n.sigma_speed, seed)?,
        None => out.traces.clone(),
    };
    io::write_traces(&a.out_traces, &traces)?;
    if verbose {
        let rows: usize = traces.vehicles().iter().map(|v| v.len()).sum();
        eprintln!("wrote {rows} samples for {} vehicles", traces.vehicles().len());
    }
    if let Some(path) = &a.out_truth {
        match &out.ground_truth {
            Some(gt) => io::write_json(path, gt)?,
            None => eprintln!("warning: scenario has no completed scripted overtake; no ground truth written"),
        }
    }
    if let Some(c) = &out.collision {
        bail!(
            "collision between {} and {} at t = {} s (gaps {:.3} m along, {:.3} m across)",
            c.vehicles[0],
            c.vehicles[1],
            c.t,
            c.longitudinal_gap,
            c.lateral_gap
        );
    }
    Ok(0)
}

fn extract(a: ExtractArgs, verbose: bool) -> Result<u8> {
    for t in &a.traces {
        require_file(t)?;
    }
    let inputs: Vec<&Path> = a.traces.iter().map(PathBuf::as_path).collect();
    check_output(&a.out, &inputs)?;
    if let Some(o) = &a.out_observations {
        check_output(o, &inputs)?;
    }
    let road = overtake_core::RoadGeometry::new(a.lane_width)?;
    let config = SegmentationConfig {
        smoothing_window: a.smoothing,
        ..SegmentationConfig::default()
    };
    let mut records: Vec<ManeuverRecord> = Vec::with_capacity(a.traces.len());
    for path in &a.traces {
        let traces = io::read_traces(path)?;
        let rec = analyze(&traces, &a.ego, &road, &config).with_context(|| format!("segmenting {}", path.display()))?;
        if verbose {
            eprintln!(
                "{}: t_total {:.2} s, {} overtaken, {:.2} s in the opposite lane",
                path.display(),
                rec.t_total,
                rec.n_overtaken,
                rec.opposite_lane_time
            );
        }
        records.push(rec);
    }
    io::write_json(&a.out, &records)?;
    if let Some(path) = &a.out_observations {
        let mut observations = Vec::new();
        for (rec, src) in records.iter().zip(&a.traces) {
            match rec.to_observation() {
                Ok(o) => observations.push(o),
                Err(e) => eprintln!("skipping {}: {e}", src.display()),
            }
        }
        io::write_observations(path, &observations)?;
    }
    Ok(0)
}

fn calibrate(a: CalibrateArgs) -> Result<u8> {
    require_file(&a.calib)?;
    require_file(&a.camera)?;
    let camera: CameraModel = io::read_json(&a.camera, "camera JSON")?;
    let set = io::read_calibration(&a.calib)?;
    let mape = set.mape(&camera)?;
    println!(
        "sessions: {}\ntargets per session: {}\nMAPE: {mape:.4} %",
        set.sessions.len(),
        set.repetitions()
    );
    Ok(0)
}

fn fit(a: FitArgs, verbose: bool) -> Result<u8> {
    require_file(&a.data)?;
    check_output(&a.out, &[&a.data])?;
    let data = io::read_observations(&a.data)?;
    let options = FitOptions {
        mode: a.mode.into(),
        tolerance: a.tol,
        max_iterations: a.max_iter,
        gradient: if a.numeric_gradient {
            GradientMode::Numeric
        } else {
            GradientMode::Analytic
        },
        ..FitOptions::default()
    };
    let result = fit_aft(&data, &options)?;
    let meta = result.meta();
    io::save_model(&a.out, &result.model, Some(meta.clone()))?;
    if !result.converged {
        eprintln!(
            "warning: fit did not converge after {} iterations (gradient max-norm {:.3e})",
            result.iterations, result.gradient_max_norm
        );
    }
    if verbose {
        eprintln!(
            "n = {}, log-likelihood {:.6}, {} iterations",
            result.n_observations, result.log_likelihood, result.iterations
        );
    }
    println!("{:<10}{:>12}{:>12}", "term", "estimate", "std.err");
    for (i, c) in result.model.coefficients().iter().enumerate() {
        let se = meta.coefficients.get(i).map_or(f64::NAN, |s| s.se);
        println!("{:<10}{:>12.5}{:>12.5}", c.name, c.beta, se);
    }
    println!("{:<10}{:>12.5}{:>12.5}", "gamma", result.model.gamma(), meta.gamma_se.unwrap_or(f64::NAN));
    println!("converged: {}", result.converged);
    Ok(0)
}

fn parse_covariates(text: &str) -> Result<CovariateVector> {
    let mut ud = None;
    let mut pd = None;
    let mut dab = None;
    let mut multiple = None;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got `{part}`"))?;
        let value = value.trim();
        let num = || value.parse::<f64>().with_context(|| format!("`{key}` is not a number: `{value}`"));
        match key.trim() {
            "ud" => ud = Some(num()?),
            "pd" => pd = Some(num()?),
            "dab" => dab = Some(num()?),
            "multiple" => {
                multiple = Some(match value {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => bail!("`multiple` must be 0 or 1, got `{value}`"),
                })
            }
            other => bail!("unknown covariate `{other}` (expected ud, pd, dab, multiple)"),
        }
    }
    let missing = |name: &str| anyhow!("covariate `{name}` is missing");
    Ok(CovariateVector::new(
        ud.ok_or_else(|| missing("ud"))?,
        pd.ok_or_else(|| missing("pd"))?,
        dab.ok_or_else(|| missing("dab"))?,
        multiple.ok_or_else(|| missing("multiple"))?,
    )?)
}

fn eval(a: EvalArgs) -> Result<u8> {
    let model = load_model(&a.model)?;
    let x = parse_covariates(&a.covariates)?;
    let dist = model.distribution(&x)?;
    let report = serde_json::json!({
        "t_s": a.t,
        "survival": dist.survival(a.t)?,
        "hazard": dist.hazard(a.t)?,
        "density": dist.density(a.t)?,
        "median_s": dist.quantile(0.5)?.seconds(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn decide_cmd(a: DecideArgs) -> Result<u8> {
    require_file(&a.snapshot)?;
    if let Some(out) = &a.out {
        let mut inputs = model_inputs(&a.model);
        inputs.push(&a.snapshot);
        check_output(out, &inputs)?;
    }
    let model = load_model(&a.model)?;
    let snapshot: TrafficSnapshot = io::read_json(&a.snapshot, "snapshot JSON")?;
    let defaults = DecisionConfig::default();
    let config = DecisionConfig {
        time_threshold: a.time_threshold.unwrap_or(defaults.time_threshold),
        distance_threshold: a.distance_threshold.unwrap_or(defaults.distance_threshold),
        risk_tolerance: a.risk_tolerance.unwrap_or(defaults.risk_tolerance),
        time_margin: a.time_margin.unwrap_or(defaults.time_margin),
        ..defaults
    };
    let decision = decide(&snapshot, &model, &config)?;
    let text = io::to_json_string(&decision);
    print!("{text}");
    if let Some(out) = &a.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(match decision.verdict {
        Verdict::Safe => 0,
        Verdict::Unsafe => 2,
    })
}
