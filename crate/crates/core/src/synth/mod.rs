//! Ground-truth gaze-trace simulator.
//!
//! A script moves the head at constant speed along a polyline while the eye
//! fixates scripted surface points, with saccades between them. The exact
//! visual axis of every frame is known, so the simulator is the oracle for
//! detection and calibration tests.

mod fixtures;
mod generate;

use nalgebra::{Point3, Unit, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::{remove_offset, CalibrationParams};
use crate::fixation::GazeSample;
use crate::geometry::{GazeDirection, HeadPose, Ray, SceneModel, WorldPoint};

pub use fixtures::{furnished_room, single_plane};
pub use generate::{generate_script, TraceRecipe};

/// Slowest angular velocity a saccade-labeled frame pair may show.
pub const SACCADE_FLOOR_DEG_PER_S: f64 = 100.0;

/// Fixation targets must be the first surface hit within this distance.
pub const TARGET_TOLERANCE_M: f64 = 1e-3;

/// Half-width of the path window whose chord gives the walking direction.
pub const HEADING_LOOKAHEAD_M: f64 = 1.0;

/// Smallest camera-frame z of a unit gaze (about 78° off-axis).
const MIN_GAZE_FORWARD: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("fixation target of segment {segment} is not visible at frame {frame}")]
    TargetNotVisible { segment: usize, frame: usize },
    #[error("gaze at frame {frame} points {angle_deg:.1}° off the head axis")]
    GazeOutOfView { frame: usize, angle_deg: f64 },
    #[error("saccade frames {frame} move at {velocity_deg_per_s:.1}°/s, below the saccade floor")]
    SaccadeTooSlow { frame: usize, velocity_deg_per_s: f64 },
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("could not generate a script: {0}")]
    Generation(String),
}

/// What the emitted raw gaze represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GazeRole {
    /// Optical-axis-like: the visual axis with the true offset removed.
    #[default]
    #[serde(rename = "opt")]
    Optical,
    /// Visual-axis-like: an imperfectly calibrated visual axis.
    #[serde(rename = "vis")]
    Visual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPath {
    /// Polyline vertices, meters.
    pub waypoints: Vec<[f64; 3]>,
    /// Optional look-at point per waypoint, interpolated along each leg.
    /// Without it the head faces the direction of travel.
    #[serde(default)]
    pub look_at: Vec<[f64; 3]>,
    pub speed_m_per_s: f64,
    /// Return to the first waypoint and keep looping.
    #[serde(default)]
    pub closed: bool,
}

impl HeadPath {
    pub fn stationary(position: [f64; 3], look_at: [f64; 3]) -> Self {
        Self {
            waypoints: vec![position],
            look_at: vec![look_at],
            speed_m_per_s: 0.0,
            closed: false,
        }
    }

    fn legs(&self) -> Vec<(Point3<f64>, Point3<f64>, usize, usize)> {
        let n = self.waypoints.len();
        let mut legs: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if self.closed && n > 1 {
            legs.push((n - 1, 0));
        }
        legs.into_iter()
            .map(|(a, b)| (Point3::from(self.waypoints[a]), Point3::from(self.waypoints[b]), a, b))
            .filter(|(a, b, _, _)| (b - a).norm() > 0.0)
            .collect()
    }

    fn length(&self) -> f64 {
        self.legs().iter().map(|(a, b, _, _)| (b - a).norm()).sum()
    }

    /// Position, travel direction and interpolated look-at point after
    /// travelling `distance` meters. The travel direction is the chord
    /// between the points [`HEADING_LOOKAHEAD_M`] behind and ahead, so the
    /// heading turns gradually at corners.
    fn state_at(&self, distance: f64) -> (Point3<f64>, Option<Vector3<f64>>, Option<Point3<f64>>) {
        let (pos, travel, look_at) = self.locate(distance);
        let Some(travel) = travel else {
            return (pos, None, look_at);
        };
        let chord = self.locate(distance + HEADING_LOOKAHEAD_M).0 - self.locate(distance - HEADING_LOOKAHEAD_M).0;
        let heading = if chord.norm() > 1e-6 { chord.normalize() } else { travel };
        (pos, Some(heading), look_at)
    }

    fn locate(&self, distance: f64) -> (Point3<f64>, Option<Vector3<f64>>, Option<Point3<f64>>) {
        let look = |i: usize| self.look_at.get(i).map(|p| Point3::from(*p));
        let legs = self.legs();
        if legs.is_empty() || self.speed_m_per_s == 0.0 {
            return (Point3::from(self.waypoints[0]), None, look(0));
        }
        let total = self.length();
        let mut d = if self.closed { distance.rem_euclid(total) } else { distance.min(total) };
        for (i, (a, b, ia, ib)) in legs.iter().enumerate() {
            let len = (b - a).norm();
            if d <= len || i == legs.len() - 1 {
                let f = (d / len).clamp(0.0, 1.0);
                let pos = a + (b - a) * f;
                let look_at = match (look(*ia), look(*ib)) {
                    (Some(la), Some(lb)) => Some(la + (lb - la) * f),
                    (Some(la), None) => Some(la),
                    _ => None,
                };
                return (pos, Some((b - a) / len), look_at);
            }
            d -= len;
        }
        unreachable!("legs are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Fixation { target: [f64; 3], duration: f64 },
    Saccade { duration: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Fixation { duration, .. } | Segment::Saccade { duration } => *duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blink {
    pub start: f64,
    pub duration: f64,
}

fn default_follow() -> f64 {
    0.7
}

fn default_rate() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScript {
    /// Scene file the script was written against.
    #[serde(default)]
    pub scene: Option<String>,
    pub head_path: HeadPath,
    /// Fraction of the way the head turns from its path direction toward
    /// the attended point; the eye covers the rest.
    #[serde(default = "default_follow")]
    pub head_follow: f64,
    pub segments: Vec<Segment>,
    pub true_offset: CalibrationParams,
    /// Per-axis standard deviation of tangent-plane gaze noise, degrees.
    #[serde(default)]
    pub noise_std_deg: f64,
    #[serde(default)]
    pub blinks: Vec<Blink>,
    #[serde(default = "default_rate")]
    pub sampling_rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub role: GazeRole,
    /// Residual miscalibration applied to visual-role traces.
    #[serde(default)]
    pub residual: CalibrationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Fixation,
    Saccade,
}

/// A run of frames `[start, end)` belonging to one script segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
}

impl LabeledSegment {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_offset: CalibrationParams,
    #[serde(default)]
    pub role: GazeRole,
    #[serde(default)]
    pub residual: CalibrationParams,
    pub segments: Vec<LabeledSegment>,
}

impl GroundTruth {
    pub fn fixations(&self) -> impl Iterator<Item = &LabeledSegment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Fixation)
    }

    pub fn label_of(&self, frame: usize) -> Option<&LabeledSegment> {
        self.segments.iter().find(|s| s.contains(frame))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    pub samples: Vec<GazeSample>,
    pub ground_truth: Option<GroundTruth>,
    pub scene_path: Option<String>,
}

impl TraceDataset {
    pub fn new(samples: Vec<GazeSample>) -> Self {
        Self {
            samples,
            ground_truth: None,
            scene_path: None,
        }
    }

    /// First `frames` samples, with labels clipped to match.
    pub fn prefix(&self, frames: usize) -> TraceDataset {
        let frames = frames.min(self.samples.len());
        let ground_truth = self.ground_truth.as_ref().map(|gt| GroundTruth {
            segments: gt
                .segments
                .iter()
                .filter(|s| s.start < frames)
                .map(|s| LabeledSegment {
                    end: s.end.min(frames),
                    ..s.clone()
                })
                .collect(),
            ..gt.clone()
        });
        TraceDataset {
            samples: self.samples[..frames].to_vec(),
            ground_truth,
            scene_path: self.scene_path.clone(),
        }
    }
}

/// Summed frame-to-frame head translation up to and including `upto_frame`.
pub fn cumulative_distance(samples: &[GazeSample], upto_frame: usize) -> f64 {
    let end = upto_frame.min(samples.len().saturating_sub(1));
    (1..=end)
        .map(|i| (samples[i].pose.translation() - samples[i - 1].pose.translation()).norm())
        .sum()
}

/// Number of leading frames whose cumulative distance does not exceed `meters`.
pub fn frames_within_distance(samples: &[GazeSample], meters: f64) -> usize {
    let mut total = 0.0;
    for i in 1..samples.len() {
        total += (samples[i].pose.translation() - samples[i - 1].pose.translation()).norm();
        if total > meters {
            return i;
        }
    }
    samples.len()
}

/// Frame index ranges of every segment, from cumulative durations.
fn timeline(script: &SimScript) -> Vec<(usize, usize)> {
    let rate = script.sampling_rate_hz;
    let mut t = 0.0;
    script
        .segments
        .iter()
        .map(|s| {
            let start = (t * rate).round() as usize;
            t += s.duration();
            (start, (t * rate).round() as usize)
        })
        .collect()
}

/// Noiseless state of one frame.
#[derive(Debug, Clone, Copy)]
struct FrameState {
    pose: HeadPose,
    /// Exact visual axis in the world frame (unit).
    visual_world: Vector3<f64>,
}

struct Simulator<'a> {
    script: &'a SimScript,
    scene: &'a SceneModel,
    spans: Vec<(usize, usize)>,
}

impl<'a> Simulator<'a> {
    fn new(script: &'a SimScript, scene: &'a SceneModel) -> Result<Self, SimError> {
        validate_script(script)?;
        Ok(Self {
            script,
            scene,
            spans: timeline(script),
        })
    }

    fn frame_count(&self) -> usize {
        self.spans.last().map_or(0, |s| s.1)
    }

    fn segment_of(&self, frame: usize) -> usize {
        self.spans
            .iter()
            .position(|&(s, e)| (s..e).contains(&frame))
            .expect("frame inside the timeline")
    }

    fn target(&self, segment: usize) -> Point3<f64> {
        match &self.script.segments[segment] {
            Segment::Fixation { target, .. } => Point3::from(*target),
            Segment::Saccade { .. } => unreachable!("validated: saccades sit between fixations"),
        }
    }

    fn state(&self, frame: usize) -> Result<FrameState, SimError> {
        let script = self.script;
        let t = frame as f64 / script.sampling_rate_hz;
        let (head, travel, look_at) = script.head_path.state_at(t * script.head_path.speed_m_per_s);
        let segment = self.segment_of(frame);
        let (visual_world, attention) = match &script.segments[segment] {
            Segment::Fixation { target, .. } => {
                let p = Point3::from(*target);
                ((p - head).normalize(), p)
            }
            Segment::Saccade { .. } => {
                let (prev, next) = (self.target(segment - 1), self.target(segment + 1));
                let (start, end) = self.spans[segment];
                let f = (frame - start + 1) as f64 / (end - start + 1) as f64;
                let from = Unit::new_normalize(prev - head);
                let to = Unit::new_normalize(next - head);
                let dir = UnitQuaternion::rotation_between_axis(&from, &to)
                    .map(|q| q.powf(f) * from)
                    .unwrap_or(from);
                (dir.into_inner(), prev + (next - prev) * f)
            }
        };
        let path_dir = match (look_at, travel) {
            (Some(l), _) if (l - head).norm() > 1e-9 => (l - head).normalize(),
            (_, Some(d)) => d,
            _ => Vector3::z(),
        };
        let to_attention = (attention - head).normalize();
        let follow = script.head_follow;
        let forward = path_dir * (1.0 - follow) + to_attention * follow;
        let pose = HeadPose::looking_along(&head, &forward, &Vector3::y())
            .map_err(|e| SimError::InvalidScript(format!("frame {frame}: {e}")))?;
        Ok(FrameState { pose, visual_world })
    }

    fn check_visible(&self, frame: usize, state: &FrameState) -> Result<(), SimError> {
        let segment = self.segment_of(frame);
        if let Segment::Fixation { target, .. } = &self.script.segments[segment] {
            let target = Point3::from(*target);
            let ray = Ray::new(state.pose.position(), target - state.pose.position());
            let ok = self
                .scene
                .intersect(&ray)
                .is_some_and(|hit| (hit.point - target).norm() <= TARGET_TOLERANCE_M);
            if !ok {
                return Err(SimError::TargetNotVisible { segment, frame });
            }
        }
        let local = state.pose.rotation().tr_mul(&state.visual_world);
        if local.z < MIN_GAZE_FORWARD {
            return Err(SimError::GazeOutOfView {
                frame,
                angle_deg: local.z.clamp(-1.0, 1.0).acos().to_degrees(),
            });
        }
        Ok(())
    }

    fn is_saccade(&self, frame: usize) -> bool {
        matches!(self.script.segments[self.segment_of(frame)], Segment::Saccade { .. })
    }

    fn check_saccade_pair(&self, frame: usize, prev: &FrameState, cur: &FrameState) -> Result<(), SimError> {
        if !(self.is_saccade(frame) || self.is_saccade(frame - 1)) {
            return Ok(());
        }
        let angle = prev.visual_world.angle(&cur.visual_world).to_degrees();
        let velocity = angle * self.script.sampling_rate_hz;
        if velocity < SACCADE_FLOOR_DEG_PER_S {
            return Err(SimError::SaccadeTooSlow {
                frame,
                velocity_deg_per_s: velocity,
            });
        }
        Ok(())
    }

    /// Validates frames `from..to` (used by the script generator).
    fn validate_frames(&self, from: usize, to: usize) -> Result<(), SimError> {
        let mut prev = if from > 0 { Some(self.state(from - 1)?) } else { None };
        for frame in from..to {
            let state = self.state(frame)?;
            self.check_visible(frame, &state)?;
            if let Some(p) = &prev {
                self.check_saccade_pair(frame, p, &state)?;
            }
            prev = Some(state);
        }
        Ok(())
    }

    fn labels(&self) -> Vec<LabeledSegment> {
        self.script
            .segments
            .iter()
            .zip(&self.spans)
            .filter(|(_, (s, e))| e > s)
            .map(|(seg, &(start, end))| match seg {
                Segment::Fixation { target, .. } => LabeledSegment {
                    kind: SegmentKind::Fixation,
                    start,
                    end,
                    target: Some(*target),
                },
                Segment::Saccade { .. } => LabeledSegment {
                    kind: SegmentKind::Saccade,
                    start,
                    end,
                    target: None,
                },
            })
            .collect()
    }
}

fn validate_script(script: &SimScript) -> Result<(), SimError> {
    let bad = |m: String| Err(SimError::InvalidScript(m));
    if !(script.sampling_rate_hz > 0.0) {
        return bad("sampling rate must be positive".into());
    }
    if script.head_path.waypoints.is_empty() {
        return bad("head path needs at least one waypoint".into());
    }
    if !(script.head_path.speed_m_per_s >= 0.0) {
        return bad("head speed must be non-negative".into());
    }
    if !(0.0..=1.0).contains(&script.head_follow) {
        return bad("head_follow must lie in [0, 1]".into());
    }
    if !(script.noise_std_deg >= 0.0) {
        return bad("noise must be non-negative".into());
    }
    if script.segments.is_empty() {
        return bad("script has no segments".into());
    }
    for (i, s) in script.segments.iter().enumerate() {
        if !(s.duration() > 0.0) {
            return bad(format!("segment {i} has non-positive duration"));
        }
        if let Segment::Saccade { .. } = s {
            let between = i > 0
                && i + 1 < script.segments.len()
                && matches!(script.segments[i - 1], Segment::Fixation { .. })
                && matches!(script.segments[i + 1], Segment::Fixation { .. });
            if !between {
                return bad(format!("saccade segment {i} must sit between two fixations"));
            }
        }
    }
    for b in &script.blinks {
        if !(b.duration > 0.0) {
            return bad("blink durations must be positive".into());
        }
    }
    Ok(())
}

/// Adds isotropic tangent-plane noise: the deviation angle is Rayleigh
/// distributed with per-axis standard deviation `std_rad`.
fn perturb(direction: &Vector3<f64>, std_rad: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    if std_rad == 0.0 {
        return *direction;
    }
    let normal = Normal::new(0.0, std_rad).expect("finite std");
    let (a, b) = (normal.sample(rng), normal.sample(rng));
    let r = a.hypot(b);
    if r == 0.0 {
        return *direction;
    }
    let helper = if direction.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = direction.cross(&helper).normalize();
    let e2 = direction.cross(&e1);
    direction * r.cos() + (e1 * (a / r) + e2 * (b / r)) * r.sin()
}

/// Renders a script into a trace with ground-truth labels.
pub fn simulate(script: &SimScript, scene: &SceneModel) -> Result<TraceDataset, SimError> {
    let sim = Simulator::new(script, scene)?;
    let n = sim.frame_count();
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let std_rad = script.noise_std_deg.to_radians();
    let mut samples = Vec::with_capacity(n);
    let mut prev: Option<FrameState> = None;
    for frame in 0..n {
        let state = sim.state(frame)?;
        sim.check_visible(frame, &state)?;
        if let Some(p) = &prev {
            sim.check_saccade_pair(frame, p, &state)?;
        }
        let local = state.pose.rotation().tr_mul(&state.visual_world);
        let noisy = perturb(&local, std_rad, &mut rng);
        let visual = GazeDirection::from_vector(&noisy)
            .map_err(|_| SimError::GazeOutOfView { frame, angle_deg: 90.0 })?;
        let removed = match script.role {
            GazeRole::Optical => script.true_offset,
            GazeRole::Visual => script.residual,
        };
        let gaze = remove_offset(&visual, &removed).map_err(|_| SimError::GazeOutOfView { frame, angle_deg: 90.0 })?;
        let timestamp = frame as f64 / script.sampling_rate_hz;
        let blinking = script
            .blinks
            .iter()
            .any(|b| timestamp >= b.start && timestamp < b.start + b.duration);
        samples.push(GazeSample {
            timestamp,
            gaze,
            pose: state.pose,
            openness: if blinking { 0.0 } else { 1.0 },
        });
        prev = Some(state);
    }
    Ok(TraceDataset {
        samples,
        ground_truth: Some(GroundTruth {
            true_offset: script.true_offset,
            role: script.role,
            residual: script.residual,
            segments: sim.labels(),
        }),
        scene_path: script.scene.clone(),
    })
}

/// Exact world-frame visual axis of a frame, without noise.
pub fn exact_visual_axis(script: &SimScript, scene: &SceneModel, frame: usize) -> Result<(HeadPose, Vector3<f64>), SimError> {
    let sim = Simulator::new(script, scene)?;
    let s = sim.state(frame)?;
    Ok((s.pose, s.visual_world))
}

/// World point a calibrated ray from `sample` hits, if any.
pub fn point_of_regard(sample: &GazeSample, gaze: &GazeDirection, scene: &SceneModel) -> Option<WorldPoint> {
    crate::geometry::inverse_project(&sample.pose, gaze, scene)
}
