//! End-to-end self-calibration of one trace: blink filtering, fixation
//! detection and offset optimization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calib::{optimize, ClusterCost, RegionResult};
use crate::eye::{remove_offset, CalibrationParams};
use crate::fixation::{detect_fixations, filter_blinks, Algorithm, FixationCluster, GazeSample};
use crate::geometry::SceneModel;
use crate::io::RunConfig;
use crate::synth::{cumulative_distance, GazeRole, GroundTruth};
use crate::Error;

/// Which gaze drives fixation detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Uncalibrated optical-like gaze (`θ = 0`).
    Opt,
    /// Gaze calibrated with a known detection offset.
    Vis,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Opt, Mode::Vis];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Opt => "opt",
            Mode::Vis => "vis",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "opt" => Ok(Mode::Opt),
            "vis" => Ok(Mode::Vis),
            other => Err(format!("unknown mode '{other}' (expected opt or vis)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOptions {
    pub algo: Algorithm,
    pub mode: Mode,
    /// What the raw gaze in the trace represents.
    pub role: GazeRole,
    /// Detection offset for `vis` mode. Falls back to the prior for
    /// visual-role traces and to the recorded true offset otherwise.
    pub detection_theta: Option<CalibrationParams>,
    pub config: RunConfig,
}

impl CalibrateOptions {
    pub fn new(algo: Algorithm, mode: Mode) -> Self {
        Self {
            algo,
            mode,
            role: GazeRole::Optical,
            detection_theta: None,
            config: RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub algo: Algorithm,
    pub mode: Mode,
    pub role: GazeRole,
    pub theta: CalibrationParams,
    pub detection_theta: CalibrationParams,
    pub total_cost: f64,
    pub cluster_count: usize,
    pub per_cluster: Vec<ClusterCost>,
    pub clusters: Vec<FixationCluster>,
    pub samples: usize,
    pub samples_after_blink_filter: usize,
    /// Summed head translation over the whole trace, meters.
    pub cumulative_distance_m: f64,
    pub flat_surface: bool,
    pub relative_spread: f64,
    pub evaluations: usize,
    pub regions: Vec<RegionResult>,
}

/// Converts raw samples into optical-like gaze for the optimizer.
pub fn optical_samples(samples: &[GazeSample], role: GazeRole, prior: &CalibrationParams) -> Result<Vec<GazeSample>, Error> {
    match role {
        GazeRole::Optical => Ok(samples.to_vec()),
        GazeRole::Visual => samples
            .iter()
            .map(|s| {
                Ok(GazeSample {
                    gaze: remove_offset(&s.gaze, prior)?,
                    ..*s
                })
            })
            .collect(),
    }
}

/// Offset used to detect fixations in `mode`.
pub fn detection_theta(opts: &CalibrateOptions, truth: Option<&GroundTruth>) -> Result<CalibrationParams, Error> {
    match opts.mode {
        Mode::Opt => Ok(CalibrationParams::ZERO),
        Mode::Vis => opts
            .detection_theta
            .or_else(|| (opts.role == GazeRole::Visual).then_some(opts.config.prior))
            .or_else(|| truth.map(|t| t.true_offset))
            .ok_or_else(|| Error::Invalid("vis mode needs a detection offset or a ground-truth sidecar".into())),
    }
}

/// Detects fixations and optimizes the offset for one trace.
pub fn calibrate(samples: &[GazeSample], scene: &SceneModel, opts: &CalibrateOptions, truth: Option<&GroundTruth>) -> Result<CalibrationReport, Error> {
    let theta_det = detection_theta(opts, truth)?;
    let optical = optical_samples(samples, opts.role, &opts.config.prior)?;
    let clusters = detect(&optical, scene, opts, &theta_det)?;
    calibrate_clusters(&optical, scene, opts, theta_det, clusters)
}

/// Blink filtering and detection on optical-like samples.
pub fn detect(optical: &[GazeSample], scene: &SceneModel, opts: &CalibrateOptions, theta_det: &CalibrationParams) -> Result<Vec<FixationCluster>, Error> {
    let cfg = &opts.config.detector;
    let trace = filter_blinks(optical, cfg.openness_cutoff);
    Ok(detect_fixations(&trace, opts.algo, Some(scene), theta_det, cfg)?)
}

/// Optimization over already detected clusters.
pub fn calibrate_clusters(
    optical: &[GazeSample],
    scene: &SceneModel,
    opts: &CalibrateOptions,
    detection_theta: CalibrationParams,
    clusters: Vec<FixationCluster>,
) -> Result<CalibrationReport, Error> {
    let calibration = optimize(&clusters, optical, scene, &opts.config.optimizer)?;
    let kept = optical.iter().filter(|s| s.openness >= opts.config.detector.openness_cutoff).count();
    Ok(CalibrationReport {
        algo: opts.algo,
        mode: opts.mode,
        role: opts.role,
        theta: calibration.theta,
        detection_theta,
        total_cost: calibration.report.total_cost,
        cluster_count: clusters.len(),
        per_cluster: calibration.report.per_cluster,
        clusters,
        samples: optical.len(),
        samples_after_blink_filter: kept,
        cumulative_distance_m: cumulative_distance(optical, optical.len().saturating_sub(1)),
        flat_surface: calibration.flat_surface,
        relative_spread: calibration.relative_spread,
        evaluations: calibration.evaluations,
        regions: calibration.regions,
    })
}
