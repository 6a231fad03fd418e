use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use gazecal::baseline::{evaluate_accuracy, fit_and_evaluate, synthesize_session, Regression, SessionRecipe, Uncorrected};
use gazecal::eye::CalibrationParams;
use gazecal::experiment::{run_experiment, ExperimentSpec};
use gazecal::fixation::{filter_blinks, Algorithm};
use gazecal::io::{load_dataset, load_json, load_recipe, load_scene, load_script, load_session, save_dataset, save_json, truth_path, RunConfig};
use gazecal::pipeline::{calibrate, detect, detection_theta, CalibrateOptions, Mode};
use gazecal::synth::{cumulative_distance, generate_script, simulate, GazeRole, TraceDataset};
use serde_json::json;

/// Self-calibration of the visual-axis offset of a head-mounted eye tracker.
#[derive(Debug, Parser)]
#[command(name = "gazecal", version)]
struct Cli {
    /// TOML run configuration (detector, optimizer, prior).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed: optimizer, simulation and experiment.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for relative output paths.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trace and its ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Detect fixation clusters in a trace.
    Detect(DetectArgs),
    /// Estimate the offset from a trace.
    Calibrate(CalibrateArgs),
    /// Marker-based regression baseline.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Run a batch experiment described by a JSON spec.
    Experiment(ExperimentArgs),
    /// Summarize a trace file.
    Inspect(InspectArgs),
    /// Print the effective run configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Explicit simulation script (JSON).
    #[arg(long, conflicts_with = "recipe", required_unless_present = "recipe")]
    script: Option<PathBuf>,
    /// Randomized trace recipe (JSON).
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// Scene: OBJ path or builtin:room / builtin:plane[:distance].
    #[arg(long)]
    scene: Option<String>,
    /// Output trace (JSONL); the sidecar goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Scene; defaults to the one recorded with the trace.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long, default_value = "ivdt3d")]
    algo: Algorithm,
    #[arg(long, default_value = "opt")]
    mode: Mode,
    /// What the trace gaze represents: opt or vis. Defaults to the sidecar's.
    #[arg(long, value_parser = parse_role)]
    role: Option<GazeRole>,
    /// Detection offset for vis mode, "alpha,beta" in degrees.
    #[arg(long, value_parser = parse_theta, allow_hyphen_values = true)]
    theta: Option<CalibrationParams>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Synthesize a marker session from a recipe (defaults when omitted).
    Synth {
        #[arg(long)]
        recipe: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the regression on estimation markers and report held-out accuracy.
    Fit {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a correction on the session's held-out markers.
    Eval {
        #[arg(long)]
        session: PathBuf,
        /// Fitted regression (JSON, as written by `baseline fit`).
        #[arg(long, conflicts_with = "theta")]
        regression: Option<PathBuf>,
        /// Offset correction, "alpha,beta" in degrees.
        #[arg(long, value_parser = parse_theta, allow_hyphen_values = true)]
        theta: Option<CalibrationParams>,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Directory for summary.csv, trials.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    trace: PathBuf,
}

fn parse_theta(s: &str) -> Result<CalibrationParams, String> {
    let (a, b) = s.split_once(',').ok_or("expected \"alpha,beta\"")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    let theta = CalibrationParams::new(num(a)?, num(b)?);
    if theta.alpha.is_finite() && theta.beta.is_finite() {
        Ok(theta)
    } else {
        Err("angles must be finite".into())
    }
}

fn parse_role(s: &str) -> Result<GazeRole, String> {
    match s.to_ascii_lowercase().as_str() {
        "opt" => Ok(GazeRole::Optical),
        "vis" => Ok(GazeRole::Visual),
        other => Err(format!("unknown role {other:?} (expected opt or vis)")),
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Data(e) => {
                let mut text = String::new();
                for cause in e.chain().map(|c| c.to_string()) {
                    if !text.contains(&cause) {
                        if !text.is_empty() {
                            text.push_str(": ");
                        }
                        text.push_str(&cause);
                    }
                }
                f.write_str(&text)
            }
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn print_stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn classify(e: gazecal::Error) -> Failure {
    use gazecal::calib::CalibError;
    use gazecal::fixation::DetectError;
    match e {
        gazecal::Error::Calib(CalibError::InvalidConfig(_)) | gazecal::Error::Detect(DetectError::InvalidConfig(_)) => {
            Failure::Usage(e.into())
        }
        other => data(other),
    }
}

struct RunContext {
    config: RunConfig,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
}

impl RunContext {
    fn output(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    fn ensure_parent(&self, path: &Path) -> Result<(), Failure> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).map_err(data)?;
        }
        Ok(())
    }

    fn emit(&self, value: &serde_json::Value, out: Option<&PathBuf>) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        match out {
            Some(path) => {
                let path = self.output(path);
                self.ensure_parent(&path)?;
                std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display())).map_err(data)?;
            }
            None => print_stdout(&(text + "\n")),
        }
        Ok(())
    }
}

fn load_trace_args(args: &TraceArgs, config: &RunConfig) -> Result<(TraceDataset, gazecal::geometry::SceneModel, CalibrateOptions), Failure> {
    let dataset = load_dataset(&args.trace).map_err(data)?;
    let scene_spec = args
        .scene
        .clone()
        .or_else(|| dataset.scene_path.clone())
        .ok_or_else(|| Failure::Usage(anyhow!("no --scene given and the trace does not record one")))?;
    let scene = load_scene(&scene_spec).map_err(data)?;
    let role = args
        .role
        .or_else(|| dataset.ground_truth.as_ref().map(|t| t.role))
        .unwrap_or_default();
    let opts = CalibrateOptions {
        role,
        detection_theta: args.theta,
        config: *config,
        ..CalibrateOptions::new(args.algo, args.mode)
    };
    Ok((dataset, scene, opts))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Usage(e.into()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.optimizer.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.into()))?;
    }
    let ctx = RunContext {
        config,
        out_dir: cli.out_dir,
        seed: cli.seed,
    };

    match cli.command {
        Command::Config => print_stdout(&ctx.config.to_toml().map_err(|e| Failure::Usage(anyhow!(e)))?),
        Command::Simulate(args) => {
            let mut script = match (&args.script, &args.recipe) {
                (Some(path), _) => load_script(path).map_err(data)?,
                (None, Some(path)) => {
                    let mut recipe = load_recipe(path).map_err(data)?;
                    if let Some(seed) = ctx.seed {
                        recipe.seed = seed;
                    }
                    if let Some(scene) = &args.scene {
                        recipe.scene = Some(scene.clone());
                    }
                    let spec = recipe.scene.clone().unwrap_or_else(|| "builtin:room".into());
                    let scene = load_scene(&spec).map_err(data)?;
                    generate_script(&recipe, &scene).map_err(data)?
                }
                (None, None) => unreachable!("clap requires one of --script or --recipe"),
            };
            if let Some(seed) = ctx.seed {
                script.seed = seed;
            }
            if let Some(scene) = &args.scene {
                script.scene = Some(scene.clone());
            }
            let spec = script.scene.clone().unwrap_or_else(|| "builtin:room".into());
            script.scene = Some(spec.clone());
            let scene = load_scene(&spec).map_err(data)?;
            let dataset = simulate(&script, &scene).map_err(data)?;
            let out = ctx.output(&args.out);
            ctx.ensure_parent(&out)?;
            save_dataset(&out, &dataset).map_err(data)?;
            ctx.emit(
                &json!({
                    "trace": out,
                    "truth": truth_path(&out),
                    "samples": dataset.samples.len(),
                    "cumulative_distance_m": cumulative_distance(&dataset.samples, dataset.samples.len().saturating_sub(1)),
                }),
                None,
            )?;
        }
        Command::Detect(args) => {
            let (dataset, scene, opts) = load_trace_args(&args.trace, &ctx.config)?;
            let theta = detection_theta(&opts, dataset.ground_truth.as_ref()).map_err(classify)?;
            let optical = gazecal::pipeline::optical_samples(&dataset.samples, opts.role, &opts.config.prior).map_err(classify)?;
            let clusters = detect(&optical, &scene, &opts, &theta).map_err(classify)?;
            ctx.emit(
                &json!({
                    "algo": opts.algo,
                    "mode": opts.mode,
                    "detection_theta": theta,
                    "cluster_count": clusters.len(),
                    "clusters": clusters,
                }),
                args.out.as_ref(),
            )?;
        }
        Command::Calibrate(args) => {
            let (dataset, scene, opts) = load_trace_args(&args.trace, &ctx.config)?;
            let report = calibrate(&dataset.samples, &scene, &opts, dataset.ground_truth.as_ref()).map_err(classify)?;
            let mut value = serde_json::to_value(&report).expect("report serializes");
            if let Some(truth) = &dataset.ground_truth {
                if truth.role == GazeRole::Optical {
                    value["true_offset"] = json!(truth.true_offset);
                    value["max_component_error_deg"] = json!(report.theta.max_component_error(&truth.true_offset));
                }
            }
            ctx.emit(&value, args.out.as_ref())?;
        }
        Command::Baseline(cmd) => match cmd {
            BaselineCommand::Synth { recipe, out } => {
                let mut recipe = match recipe {
                    Some(path) => load_json::<SessionRecipe>(&path).map_err(data)?,
                    None => SessionRecipe::default(),
                };
                if let Some(seed) = ctx.seed {
                    recipe.seed = seed;
                }
                let session = synthesize_session(&recipe).map_err(data)?;
                let out = ctx.output(&out);
                ctx.ensure_parent(&out)?;
                save_json(&out, &session).map_err(data)?;
            }
            BaselineCommand::Fit { session, out } => {
                let session = load_session(&session).map_err(data)?;
                let (fit, error) = fit_and_evaluate(&session).map_err(data)?;
                let uncorrected = evaluate_accuracy(&Uncorrected, &session, &session.evaluation).map_err(data)?;
                ctx.emit(
                    &json!({
                        "regression": fit,
                        "error_deg": error,
                        "uncorrected_error_deg": uncorrected,
                        "evaluation_markers": session.evaluation,
                    }),
                    out.as_ref(),
                )?;
            }
            BaselineCommand::Eval { session, regression, theta } => {
                let session = load_session(&session).map_err(data)?;
                session.validate().map_err(data)?;
                let error = match (regression, theta) {
                    (Some(path), _) => {
                        let value: serde_json::Value = load_json(&path).map_err(data)?;
                        let fit: Regression = serde_json::from_value(value.get("regression").cloned().unwrap_or(value))
                            .with_context(|| format!("{}: not a regression", path.display()))
                            .map_err(data)?;
                        evaluate_accuracy(&fit, &session, &session.evaluation)
                    }
                    (None, Some(theta)) => evaluate_accuracy(&theta, &session, &session.evaluation),
                    (None, None) => evaluate_accuracy(&Uncorrected, &session, &session.evaluation),
                }
                .map_err(data)?;
                ctx.emit(&json!({ "error_deg": error }), None)?;
            }
        },
        Command::Experiment(args) => {
            let mut spec: ExperimentSpec = load_json(&args.spec).map_err(data)?;
            if cli.config.is_some() {
                spec.config = ctx.config;
            }
            if let Some(seed) = ctx.seed {
                spec.seed = seed;
                spec.config.optimizer.seed = seed;
            }
            let scene = load_scene(&spec.scene).map_err(data)?;
            let report = run_experiment(&spec, &scene).map_err(classify)?;
            let dir = ctx.output(args.out.as_deref().unwrap_or(Path::new(".")));
            report.write(&dir).map_err(data)?;
            print_stdout(&report.summary_csv());
            if report.partial {
                eprintln!("warning: {} trial(s) failed; summary is partial", report.failures.len());
            }
        }
        Command::Inspect(args) => {
            let dataset = load_dataset(&args.trace).map_err(data)?;
            let samples = &dataset.samples;
            let kept = filter_blinks(samples, ctx.config.detector.openness_cutoff).samples.len();
            let first = samples.first().map_or(0.0, |s| s.timestamp);
            let last = samples.last().map_or(0.0, |s| s.timestamp);
            let mut value = json!({
                "samples": samples.len(),
                "duration_s": last - first,
                "samples_after_blink_filter": kept,
                "cumulative_distance_m": cumulative_distance(samples, samples.len().saturating_sub(1)),
                "scene": dataset.scene_path,
            });
            if let Some(truth) = &dataset.ground_truth {
                value["true_offset"] = json!(truth.true_offset);
                value["role"] = json!(truth.role);
                value["fixations"] = json!(truth.fixations().count());
            }
            ctx.emit(&value, None)?;
        }
    }
    Ok(())
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
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(3)
        }
    }
}
