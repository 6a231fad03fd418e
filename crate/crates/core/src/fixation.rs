//! Moving-window fixation detection: I-VT, 3D I-DT and 3D I-VDT.
//!
//! All three detectors share the same window protocol. A window of `m`
//! frames is tested; while it satisfies the detector's condition it grows by
//! one frame. When growth fails, the window as it was before the failed
//! growth becomes a fixation cluster and the next window starts right after
//! it. A window that fails before any growth slides forward by one frame.
//!
//! The 3D dispersion test casts every calibrated gaze into the scene, projects
//! the points of regard onto the window's center camera and compares the
//! largest squared deviation from their mean with the dispersion threshold.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::{apply_offset, CalibrationParams};
use crate::geometry::{inverse_project, project, GazeDirection, HeadPose, SceneModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("trace has {available} usable samples but the detection window needs {required}")]
    TraceTooShort { available: usize, required: usize },
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} detection needs a scene model")]
    MissingScene(Algorithm),
}

/// One tracker frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    /// Seconds.
    pub timestamp: f64,
    /// Raw tracker gaze in scene-camera coordinates.
    pub gaze: GazeDirection,
    pub pose: HeadPose,
    /// Eyelid openness in `[0, 1]`.
    pub openness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub velocity_threshold_deg_per_s: f64,
    /// Squared image-plane distance at focal length 1.
    pub dispersion_threshold: f64,
    pub min_fixation_time_s: f64,
    pub sampling_rate_hz: f64,
    pub openness_cutoff: f64,
    /// Per-frame angle threshold replacing `velocity / sampling_rate`.
    pub angle_threshold_override_deg: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            velocity_threshold_deg_per_s: 80.0,
            dispersion_threshold: dispersion_from_degrees(0.7),
            min_fixation_time_s: 0.160,
            sampling_rate_hz: 50.0,
            openness_cutoff: 0.5,
            angle_threshold_override_deg: None,
        }
    }
}

/// Squared image-plane radius subtended by `degrees` at the image center.
pub fn dispersion_from_degrees(degrees: f64) -> f64 {
    degrees.to_radians().tan().powi(2)
}

impl DetectorConfig {
    /// Minimum window length `m`.
    pub fn window_size(&self) -> usize {
        (self.sampling_rate_hz * self.min_fixation_time_s).round() as usize
    }

    /// Per-frame angle threshold in degrees.
    pub fn angle_threshold_deg(&self) -> f64 {
        self.angle_threshold_override_deg
            .unwrap_or(self.velocity_threshold_deg_per_s / self.sampling_rate_hz)
    }

    pub fn cos_angle_threshold(&self) -> f64 {
        self.angle_threshold_deg().to_radians().cos()
    }

    pub fn dispersion_threshold_deg(&self) -> f64 {
        self.dispersion_threshold.sqrt().atan().to_degrees()
    }

    pub fn with_dispersion_deg(mut self, degrees: f64) -> Self {
        self.dispersion_threshold = dispersion_from_degrees(degrees);
        self
    }

    /// Largest timestamp step a window may span.
    pub fn max_frame_gap_s(&self) -> f64 {
        2.0 / self.sampling_rate_hz
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let positive = [
            ("velocity_threshold", self.velocity_threshold_deg_per_s),
            ("dispersion_threshold", self.dispersion_threshold),
            ("min_fixation_time", self.min_fixation_time_s),
            ("sampling_rate", self.sampling_rate_hz),
            ("openness_cutoff", self.openness_cutoff),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DetectError::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if self.openness_cutoff > 1.0 {
            return Err(DetectError::InvalidConfig("openness_cutoff must lie in [0, 1]".into()));
        }
        if let Some(phi) = self.angle_threshold_override_deg {
            if !(phi > 0.0 && phi < 180.0) {
                return Err(DetectError::InvalidConfig(format!("angle threshold {phi}° out of range")));
            }
        }
        if self.window_size() < 2 {
            return Err(DetectError::InvalidConfig(format!(
                "window size {} is below 2 frames",
                self.window_size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ivt,
    Idt3d,
    Ivdt3d,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ivt, Algorithm::Idt3d, Algorithm::Ivdt3d];

    fn uses_velocity(self) -> bool {
        matches!(self, Algorithm::Ivt | Algorithm::Ivdt3d)
    }

    fn uses_dispersion(self) -> bool {
        matches!(self, Algorithm::Idt3d | Algorithm::Ivdt3d)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ivt => "ivt",
            Algorithm::Idt3d => "idt3d",
            Algorithm::Ivdt3d => "ivdt3d",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ivt" => Ok(Algorithm::Ivt),
            "idt3d" | "idt" => Ok(Algorithm::Idt3d),
            "ivdt3d" | "ivdt" => Ok(Algorithm::Ivdt3d),
            other => Err(format!("unknown detection algorithm {other:?} (expected ivt, idt3d or ivdt3d)")),
        }
    }
}

/// Samples that survived blink filtering, with their positions in the source trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilteredTrace {
    pub samples: Vec<GazeSample>,
    pub source_indices: Vec<usize>,
}

impl FilteredTrace {
    /// Every sample kept, indices unchanged.
    pub fn unfiltered(samples: &[GazeSample]) -> Self {
        Self {
            samples: samples.to_vec(),
            source_indices: (0..samples.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Drops samples whose openness is strictly below `cutoff`.
pub fn filter_blinks(samples: &[GazeSample], cutoff: f64) -> FilteredTrace {
    let (source_indices, samples) = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| !(s.openness < cutoff))
        .map(|(i, s)| (i, *s))
        .unzip();
    FilteredTrace {
        samples,
        source_indices,
    }
}

/// A detected fixation: contiguous frames of the filtered trace, addressed by
/// their source-trace indices, and the center camera chosen at detection time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixationCluster {
    pub frames: Vec<usize>,
    pub center: usize,
}

impl FixationCluster {
    pub fn size(&self) -> usize {
        self.frames.len()
    }

    pub fn first(&self) -> usize {
        self.frames[0]
    }

    pub fn last(&self) -> usize {
        *self.frames.last().expect("clusters are never empty")
    }
}

/// Normalized dot product of two gaze directions.
pub fn pair_cosine(a: &GazeDirection, b: &GazeDirection) -> f64 {
    let (a, b) = (a.homogeneous(), b.homogeneous());
    a.dot(&b) / (a.norm() * b.norm())
}

/// Index of the direction closest to the mean of `world_dirs` (unit vectors).
/// Ties resolve to the lowest index.
fn center_of(world_dirs: &[Vector3<f64>]) -> usize {
    let mean = world_dirs.iter().sum::<Vector3<f64>>() / world_dirs.len() as f64;
    let mut best = (0, f64::INFINITY);
    for (k, d) in world_dirs.iter().enumerate() {
        let dist = (d - mean).norm_squared();
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best.0
}

/// Center camera of a window: the frame whose world-frame unit gaze is nearest
/// the window's mean world-frame unit gaze.
pub fn select_center_camera(window: &[GazeSample]) -> usize {
    let dirs: Vec<Vector3<f64>> = window
        .iter()
        .map(|s| s.pose.to_world_direction(&s.gaze.unit()))
        .collect();
    center_of(&dirs)
}

/// Per-frame quantities for one detection pass under a fixed calibration.
struct FrameCache<'a> {
    samples: &'a [GazeSample],
    /// Calibrated gaze, `None` when the offset pushes it out of the front half-space.
    gaze: Vec<Option<GazeDirection>>,
    world_dir: Vec<Option<Vector3<f64>>>,
    /// Point of regard; only filled for dispersion-based detectors.
    por: Vec<Option<Point3<f64>>>,
    /// `pair_ok[k]` covers the pair `(k − 1, k)`; index 0 is unused.
    gap_ok: Vec<bool>,
    velocity_ok: Vec<bool>,
}

impl<'a> FrameCache<'a> {
    fn new(
        samples: &'a [GazeSample],
        theta: &CalibrationParams,
        cfg: &DetectorConfig,
        scene: Option<&SceneModel>,
    ) -> Self {
        let gaze: Vec<Option<GazeDirection>> = samples
            .iter()
            .map(|s| apply_offset(&s.gaze, theta).ok())
            .collect();
        let world_dir = samples
            .iter()
            .zip(&gaze)
            .map(|(s, g)| g.map(|g| s.pose.to_world_direction(&g.unit())))
            .collect();
        let por = match scene {
            Some(scene) => samples
                .iter()
                .zip(&gaze)
                .map(|(s, g)| g.and_then(|g| inverse_project(&s.pose, &g, scene)))
                .collect(),
            None => vec![None; samples.len()],
        };
        let cos_th = cfg.cos_angle_threshold();
        let max_gap = cfg.max_frame_gap_s() + 1e-9;
        let mut gap_ok = vec![true; samples.len()];
        let mut velocity_ok = vec![true; samples.len()];
        for k in 1..samples.len() {
            gap_ok[k] = samples[k].timestamp - samples[k - 1].timestamp <= max_gap;
            velocity_ok[k] = match (&gaze[k - 1], &gaze[k]) {
                (Some(a), Some(b)) => pair_cosine(a, b) > cos_th,
                _ => false,
            };
        }
        Self {
            samples,
            gaze,
            world_dir,
            por,
            gap_ok,
            velocity_ok,
        }
    }

    fn gaps_ok(&self, start: usize, end: usize) -> bool {
        self.gap_ok[start + 1..end].iter().all(|&ok| ok)
    }

    fn velocity_condition(&self, start: usize, end: usize) -> bool {
        self.gaze[start].is_some() && self.velocity_ok[start + 1..end].iter().all(|&ok| ok)
    }

    fn center(&self, start: usize, end: usize) -> Option<usize> {
        let dirs: Option<Vec<Vector3<f64>>> = self.world_dir[start..end].iter().copied().collect();
        dirs.map(|d| start + center_of(&d))
    }

    fn dispersion_condition(&self, start: usize, end: usize, threshold: f64) -> bool {
        let Some(center) = self.center(start, end) else {
            return false;
        };
        let camera = &self.samples[center].pose;
        let mut points = Vec::with_capacity(end - start);
        for por in &self.por[start..end] {
            let Some(x) = por.and_then(|p| project(camera, &p).ok()) else {
                return false;
            };
            points.push(x);
        }
        max_squared_deviation(&points) < threshold
    }

    fn condition(&self, algo: Algorithm, start: usize, end: usize, cfg: &DetectorConfig) -> bool {
        self.gaps_ok(start, end)
            && (!algo.uses_velocity() || self.velocity_condition(start, end))
            && (!algo.uses_dispersion() || self.dispersion_condition(start, end, cfg.dispersion_threshold))
    }
}

/// Largest squared distance of any point from the points' mean.
pub fn max_squared_deviation(points: &[GazeDirection]) -> f64 {
    let n = points.len() as f64;
    let mu = points.iter().fold(GazeDirection::FORWARD, |acc, p| GazeDirection::new(acc.u + p.u, acc.v + p.v));
    let mean = GazeDirection::new(mu.u / n, mu.v / n);
    points.iter().map(|p| p.distance_squared(&mean)).fold(0.0, f64::max)
}

/// Velocity test on raw gaze: every consecutive pair is closer than the
/// per-frame angle threshold and no pair spans a sampling gap.
pub fn ivt_condition(window: &[GazeSample], cfg: &DetectorConfig) -> bool {
    if window.len() < 2 {
        return false;
    }
    let cache = FrameCache::new(window, &CalibrationParams::ZERO, cfg, None);
    cache.gaps_ok(0, window.len()) && cache.velocity_condition(0, window.len())
}

/// 3D dispersion test on gazes calibrated with `theta`.
pub fn idt3d_condition(
    window: &[GazeSample],
    scene: &SceneModel,
    theta: &CalibrationParams,
    cfg: &DetectorConfig,
) -> bool {
    if window.is_empty() {
        return false;
    }
    let cache = FrameCache::new(window, theta, cfg, Some(scene));
    cache.gaps_ok(0, window.len()) && cache.dispersion_condition(0, window.len(), cfg.dispersion_threshold)
}

/// Runs the window protocol over a blink-filtered trace.
///
/// `theta` calibrates the raw gaze before any test; for I-VT it has no effect
/// on the result beyond frames it pushes out of the front half-space.
pub fn detect_fixations(
    trace: &FilteredTrace,
    algo: Algorithm,
    scene: Option<&SceneModel>,
    theta: &CalibrationParams,
    cfg: &DetectorConfig,
) -> Result<Vec<FixationCluster>, DetectError> {
    cfg.validate()?;
    if algo.uses_dispersion() && scene.is_none() {
        return Err(DetectError::MissingScene(algo));
    }
    let m = cfg.window_size();
    let n = trace.len();
    if n < m {
        return Err(DetectError::TraceTooShort {
            available: n,
            required: m,
        });
    }
    let cache = FrameCache::new(&trace.samples, theta, cfg, scene.filter(|_| algo.uses_dispersion()));
    let mut clusters = Vec::new();
    let mut start = 0;
    while start + m <= n {
        let mut end = start + m;
        if !cache.condition(algo, start, end, cfg) {
            start += 1;
            continue;
        }
        while end < n && cache.condition(algo, start, end + 1, cfg) {
            end += 1;
        }
        let center = cache.center(start, end).unwrap_or(start);
        clusters.push(FixationCluster {
            frames: trace.source_indices[start..end].to_vec(),
            center: trace.source_indices[center],
        });
        start = end;
    }
    Ok(clusters)
}
