//! Synthetic experiment drivers: accuracy per detector and mode, accuracy as
//! a function of head travel, and dependence on the offset used for
//! fixation detection.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eye::{angular_error, apply_offset, remove_offset, CalibrationParams};
use crate::baseline::MarkerGrid;
use crate::fixation::{Algorithm, FixationCluster, GazeSample};
use crate::geometry::{GazeDirection, SceneModel};
use crate::io::{load_dataset, save_json, RunConfig};
use crate::pipeline::{calibrate_clusters, detect, optical_samples, CalibrateOptions, CalibrationReport, Mode};
use crate::synth::{frames_within_distance, generate_script, simulate, GazeRole, GroundTruth, TraceDataset, TraceRecipe};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Accuracy,
    Convergence,
    ParamDependence,
}

/// A trace given by file or generated from a recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    Path(String),
    Recipe(TraceRecipe),
}

fn default_distances() -> Vec<f64> {
    (3..=34).map(f64::from).collect()
}

fn default_ranges() -> Vec<usize> {
    (1..=5).collect()
}

fn default_per_range() -> usize {
    50
}

fn default_algos() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub traces: Vec<TraceSource>,
    /// Scene used by every trace (OBJ path or `builtin:` name).
    pub scene: String,
    #[serde(default = "default_algos")]
    pub algos: Vec<Algorithm>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    /// Cumulative head travel at which convergence is sampled, meters.
    #[serde(default = "default_distances")]
    pub distances_m: Vec<f64>,
    #[serde(default = "default_ranges")]
    pub ranges: Vec<usize>,
    #[serde(default = "default_per_range")]
    pub thetas_per_range: usize,
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(experiment: ExperimentKind, traces: Vec<TraceSource>, scene: impl Into<String>) -> Self {
        Self {
            experiment,
            traces,
            scene: scene.into(),
            algos: default_algos(),
            modes: default_modes(),
            distances_m: default_distances(),
            ranges: default_ranges(),
            thetas_per_range: default_per_range(),
            config: RunConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Invalid(m.into()));
        if self.traces.is_empty() {
            return bad("experiment needs at least one trace");
        }
        if self.algos.is_empty() {
            return bad("experiment needs at least one algorithm");
        }
        match self.experiment {
            ExperimentKind::Accuracy if self.modes.is_empty() => bad("accuracy needs at least one mode"),
            ExperimentKind::Convergence if self.modes.is_empty() || self.distances_m.is_empty() => {
                bad("convergence needs modes and a distance grid")
            }
            ExperimentKind::ParamDependence if self.ranges.is_empty() || self.thetas_per_range == 0 => {
                bad("param_dependence needs ranges and at least one offset per range")
            }
            ExperimentKind::ParamDependence if self.ranges.contains(&0) => bad("ranges start at 1"),
            _ => Ok(()),
        }
    }
}

/// One calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub condition: String,
    pub trace: usize,
    pub algo: Algorithm,
    pub mode: Mode,
    pub distance_m: Option<f64>,
    pub range: Option<usize>,
    pub detection_theta: CalibrationParams,
    pub theta: CalibrationParams,
    /// Mean angular error over the held-out marker directions, degrees.
    pub error_deg: f64,
    /// Largest per-component difference from the true offset, when the
    /// trace records optical-like gaze.
    pub component_error_deg: Option<f64>,
    pub clusters: usize,
    pub cumulative_distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub condition: String,
    pub trace: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub trials: usize,
    pub mean_error_deg: f64,
    pub std_error_deg: f64,
    pub median_error_deg: f64,
    pub mean_clusters: f64,
    pub mean_distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub partial: bool,
    pub conditions: Vec<ConditionSummary>,
    pub trials: Vec<Trial>,
    pub failures: Vec<TrialFailure>,
}

impl ExperimentReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.condition == name)
    }

    /// Per-condition CSV: condition, mean error, std error, cluster count, distance.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("condition,trials,mean_error_deg,std_error_deg,median_error_deg,mean_clusters,mean_distance_m\n");
        for c in &self.conditions {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.condition, c.trials, c.mean_error_deg, c.std_error_deg, c.median_error_deg, c.mean_clusters, c.mean_distance_m
            );
        }
        out
    }

    /// One row per trial, for external statistics.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from(
            "condition,trace,algo,mode,distance_m,range,detection_alpha,detection_beta,alpha,beta,error_deg,component_error_deg,clusters,cumulative_distance_m\n",
        );
        let opt = |v: Option<String>| v.unwrap_or_default();
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                t.condition,
                t.trace,
                t.algo,
                t.mode,
                opt(t.distance_m.map(|d| d.to_string())),
                opt(t.range.map(|r| r.to_string())),
                t.detection_theta.alpha,
                t.detection_theta.beta,
                t.theta.alpha,
                t.theta.beta,
                t.error_deg,
                opt(t.component_error_deg.map(|e| e.to_string())),
                t.clusters,
                t.cumulative_distance_m
            );
        }
        out
    }

    /// Writes `summary.csv`, `trials.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Invalid(format!("{}: {e}", dir.display())))?;
        let write = |name: &str, text: String| {
            std::fs::write(dir.join(name), text).map_err(|e| Error::Invalid(format!("{}: {e}", dir.join(name).display())))
        };
        write("summary.csv", self.summary_csv())?;
        write("trials.csv", self.trials_csv())?;
        save_json(&dir.join("summary.json"), self)?;
        Ok(())
    }
}

/// Mean angular error, over the held-out marker directions, of gaze
/// corrected with `theta` relative to the true visual axis.
pub fn offset_error_deg(truth: &GroundTruth, prior: &CalibrationParams, theta: &CalibrationParams) -> Result<f64, Error> {
    let grid = MarkerGrid::default();
    let markers: Vec<GazeDirection> = grid.directions();
    let eval = grid.default_evaluation();
    let mut total = 0.0;
    for &m in &eval {
        let visual = markers[m];
        let optical = match truth.role {
            GazeRole::Optical => remove_offset(&visual, &truth.true_offset)?,
            GazeRole::Visual => remove_offset(&remove_offset(&visual, &truth.residual)?, prior)?,
        };
        total += angular_error(&apply_offset(&optical, theta)?, &visual);
    }
    Ok(total / eval.len() as f64)
}

/// Random offset with `l−1 ≤ |α| ≤ l` or `l−1 ≤ |β| ≤ l`, inside `[−5, 5]²`
/// (or `[−l, l]²` for larger ranges).
pub fn draw_in_range(range: usize, rng: &mut impl Rng) -> CalibrationParams {
    let l = range as f64;
    let outer = l.max(5.0);
    let band = |rng: &mut dyn rand::RngCore| {
        let magnitude = rng.gen_range(l - 1.0..=l);
        if rng.gen::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    };
    let free = |rng: &mut dyn rand::RngCore| rng.gen_range(-outer..=outer);
    if rng.gen::<bool>() {
        CalibrationParams::new(band(rng), free(rng))
    } else {
        CalibrationParams::new(free(rng), band(rng))
    }
}

/// Whether `theta` belongs to Range `range`.
pub fn in_range(theta: &CalibrationParams, range: usize) -> bool {
    let l = range as f64;
    let inside = |x: f64| (l - 1.0..=l).contains(&x.abs());
    inside(theta.alpha) || inside(theta.beta)
}

struct Prepared {
    optical: Vec<GazeSample>,
    truth: GroundTruth,
}

fn load_source(source: &TraceSource, scene: &SceneModel, spec: &ExperimentSpec) -> Result<TraceDataset, Error> {
    match source {
        TraceSource::Path(p) => Ok(load_dataset(Path::new(p))?),
        TraceSource::Recipe(r) => {
            let mut recipe = r.clone();
            recipe.scene.get_or_insert_with(|| spec.scene.clone());
            Ok(simulate(&generate_script(&recipe, scene)?, scene)?)
        }
    }
}

fn prepare(data: TraceDataset, config: &RunConfig) -> Result<Prepared, Error> {
    let truth = data
        .ground_truth
        .ok_or_else(|| Error::Invalid("experiments need traces with a ground-truth sidecar".into()))?;
    let optical = optical_samples(&data.samples, truth.role, &config.prior)?;
    Ok(Prepared { optical, truth })
}

/// A calibration job: one trace prefix, detector, mode and detection offset.
struct Job {
    condition: String,
    trace: usize,
    algo: Algorithm,
    mode: Mode,
    frames: usize,
    distance_m: Option<f64>,
    range: Option<usize>,
    detection_theta: CalibrationParams,
}

fn build_jobs(spec: &ExperimentSpec, traces: &[Option<Prepared>]) -> Vec<Job> {
    let mut jobs = Vec::new();
    let vis_theta = |t: &Prepared| match t.truth.role {
        GazeRole::Optical => t.truth.true_offset,
        GazeRole::Visual => spec.config.prior,
    };
    for (i, trace) in traces.iter().enumerate() {
        let Some(trace) = trace else { continue };
        let n = trace.optical.len();
        for &algo in &spec.algos {
            match spec.experiment {
                ExperimentKind::Accuracy | ExperimentKind::Convergence => {
                    for &mode in &spec.modes {
                        let detection_theta = match mode {
                            Mode::Opt => CalibrationParams::ZERO,
                            Mode::Vis => vis_theta(trace),
                        };
                        let base = format!("{algo}({mode})");
                        if spec.experiment == ExperimentKind::Accuracy {
                            jobs.push(Job {
                                condition: base,
                                trace: i,
                                algo,
                                mode,
                                frames: n,
                                distance_m: None,
                                range: None,
                                detection_theta,
                            });
                            continue;
                        }
                        for &d in &spec.distances_m {
                            jobs.push(Job {
                                condition: format!("{base}@{d}m"),
                                trace: i,
                                algo,
                                mode,
                                frames: frames_within_distance(&trace.optical, d),
                                distance_m: Some(d),
                                range: None,
                                detection_theta,
                            });
                        }
                    }
                }
                ExperimentKind::ParamDependence => {
                    for &range in &spec.ranges {
                        // common offsets across detectors make ranges comparable
                        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                        rng.set_stream(((i as u64) << 32) | range as u64);
                        for _ in 0..spec.thetas_per_range {
                            let delta = draw_in_range(range, &mut rng);
                            let base = vis_theta(trace);
                            jobs.push(Job {
                                condition: format!("{algo}@range{range}"),
                                trace: i,
                                algo,
                                mode: Mode::Vis,
                                frames: n,
                                distance_m: None,
                                range: Some(range),
                                detection_theta: CalibrationParams::new(base.alpha + delta.alpha, base.beta + delta.beta),
                            });
                        }
                    }
                }
            }
        }
    }
    jobs
}

type Memo = HashMap<(usize, usize, Vec<FixationCluster>), Result<CalibrationReport, String>>;

fn summarize(name: &str, trials: &[&Trial]) -> ConditionSummary {
    let n = trials.len() as f64;
    let mut errors: Vec<f64> = trials.iter().map(|t| t.error_deg).collect();
    errors.sort_by(f64::total_cmp);
    let mean = errors.iter().sum::<f64>() / n;
    let var = if trials.len() > 1 {
        errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mid = errors.len() / 2;
    let median = if errors.len() % 2 == 1 {
        errors[mid]
    } else {
        (errors[mid - 1] + errors[mid]) / 2.0
    };
    ConditionSummary {
        condition: name.to_string(),
        trials: trials.len(),
        mean_error_deg: mean,
        std_error_deg: var.sqrt(),
        median_error_deg: median,
        mean_clusters: trials.iter().map(|t| t.clusters as f64).sum::<f64>() / n,
        mean_distance_m: trials.iter().map(|t| t.cumulative_distance_m).sum::<f64>() / n,
    }
}

/// Runs an experiment. Failing traces or trials are recorded and the run
/// continues; the report is then flagged partial.
pub fn run_experiment(spec: &ExperimentSpec, scene: &SceneModel) -> Result<ExperimentReport, Error> {
    spec.validate()?;
    let mut failures = Vec::new();
    let loaded: Vec<Option<Prepared>> = spec
        .traces
        .par_iter()
        .map(|s| load_source(s, scene, spec).and_then(|d| prepare(d, &spec.config)))
        .collect::<Vec<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(p) => Some(p),
            Err(e) => {
                failures.push(TrialFailure {
                    condition: "load".into(),
                    trace: i,
                    message: e.to_string(),
                });
                None
            }
        })
        .collect();
    let jobs = build_jobs(spec, &loaded);

    let detected: Vec<Result<Vec<FixationCluster>, String>> = jobs
        .par_iter()
        .map(|job| {
            let trace = loaded[job.trace].as_ref().expect("jobs reference loaded traces");
            let opts = options(spec, job);
            detect(&trace.optical[..job.frames], scene, &opts, &job.detection_theta).map_err(|e| e.to_string())
        })
        .collect();

    // identical cluster sets on the same prefix give identical optimizations
    let mut unique: Vec<(usize, usize, Vec<FixationCluster>)> = Vec::new();
    for (job, clusters) in jobs.iter().zip(&detected) {
        if let Ok(c) = clusters {
            let key = (job.trace, job.frames, c.clone());
            if !unique.contains(&key) {
                unique.push(key);
            }
        }
    }
    let memo: Memo = unique
        .into_par_iter()
        .map(|key| {
            let trace = loaded[key.0].as_ref().expect("loaded");
            let opts = CalibrateOptions {
                config: spec.config,
                ..CalibrateOptions::new(Algorithm::Ivt, Mode::Opt)
            };
            let result = calibrate_clusters(&trace.optical[..key.1], scene, &opts, CalibrationParams::ZERO, key.2.clone())
                .map_err(|e| e.to_string());
            (key, result)
        })
        .collect();

    let mut trials = Vec::new();
    for (job, clusters) in jobs.iter().zip(detected) {
        let trace = loaded[job.trace].as_ref().expect("loaded");
        let outcome = clusters.and_then(|c| {
            let n = c.len();
            memo[&(job.trace, job.frames, c)].clone().map(|r| (r, n))
        });
        let result = outcome.and_then(|(report, n)| {
            let error_deg = offset_error_deg(&trace.truth, &spec.config.prior, &report.theta).map_err(|e| e.to_string())?;
            Ok(Trial {
                condition: job.condition.clone(),
                trace: job.trace,
                algo: job.algo,
                mode: job.mode,
                distance_m: job.distance_m,
                range: job.range,
                detection_theta: job.detection_theta,
                theta: report.theta,
                error_deg,
                component_error_deg: (trace.truth.role == GazeRole::Optical)
                    .then(|| report.theta.max_component_error(&trace.truth.true_offset)),
                clusters: n,
                cumulative_distance_m: report.cumulative_distance_m,
            })
        });
        match result {
            Ok(t) => trials.push(t),
            Err(message) => failures.push(TrialFailure {
                condition: job.condition.clone(),
                trace: job.trace,
                message,
            }),
        }
    }

    let mut names: Vec<String> = Vec::new();
    for job in &jobs {
        if !names.contains(&job.condition) {
            names.push(job.condition.clone());
        }
    }
    let conditions = names
        .iter()
        .filter_map(|name| {
            let group: Vec<&Trial> = trials.iter().filter(|t| &t.condition == name).collect();
            (!group.is_empty()).then(|| summarize(name, &group))
        })
        .collect();
    Ok(ExperimentReport {
        experiment: spec.experiment,
        seed: spec.seed,
        partial: !failures.is_empty(),
        conditions,
        trials,
        failures,
    })
}

fn options(spec: &ExperimentSpec, job: &Job) -> CalibrateOptions {
    CalibrateOptions {
        detection_theta: Some(job.detection_theta),
        config: spec.config,
        ..CalibrateOptions::new(job.algo, job.mode)
    }
}
