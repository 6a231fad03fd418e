use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{default_follow, default_rate, Blink, GazeRole, HeadPath, Segment, SimError, SimScript, Simulator};
use crate::eye::CalibrationParams;
use crate::geometry::{Ray, SceneModel};

const ATTEMPTS_PER_TARGET: usize = 200;

/// Parameters for drawing a random fixation/saccade script along a head path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecipe {
    pub head_path: HeadPath,
    #[serde(default = "default_follow")]
    pub head_follow: f64,
    /// Total trace length, seconds.
    pub duration_s: f64,
    /// Fixation durations are drawn uniformly from this range, seconds.
    #[serde(default = "default_fixation_range")]
    pub fixation_duration_s: [f64; 2],
    #[serde(default = "default_saccade")]
    pub saccade_duration_s: f64,
    /// Smallest angle between consecutive targets seen from the head, degrees.
    #[serde(default = "default_amplitude")]
    pub min_saccade_amplitude_deg: f64,
    /// Half-width of the horizontal target cone around the head path direction, degrees.
    #[serde(default = "default_yaw")]
    pub target_yaw_deg: f64,
    /// Vertical target range relative to the head path direction, degrees.
    #[serde(default = "default_pitch")]
    pub target_pitch_deg: [f64; 2],
    /// Closest allowed target distance, meters.
    #[serde(default = "default_min_distance")]
    pub min_target_distance_m: f64,
    pub true_offset: CalibrationParams,
    #[serde(default)]
    pub noise_std_deg: f64,
    /// Mean blinks per second.
    #[serde(default)]
    pub blink_rate_hz: f64,
    #[serde(default = "default_rate")]
    pub sampling_rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub role: GazeRole,
    #[serde(default)]
    pub residual: CalibrationParams,
    #[serde(default)]
    pub scene: Option<String>,
}

fn default_fixation_range() -> [f64; 2] {
    [0.3, 0.6]
}
fn default_saccade() -> f64 {
    0.04
}
fn default_amplitude() -> f64 {
    10.0
}
fn default_yaw() -> f64 {
    30.0
}
fn default_pitch() -> [f64; 2] {
    [-25.0, 10.0]
}
fn default_min_distance() -> f64 {
    0.5
}

impl TraceRecipe {
    /// A recipe with the default timing and target distribution.
    pub fn new(head_path: HeadPath, duration_s: f64, true_offset: CalibrationParams, seed: u64) -> Self {
        Self {
            head_path,
            head_follow: default_follow(),
            duration_s,
            fixation_duration_s: default_fixation_range(),
            saccade_duration_s: default_saccade(),
            min_saccade_amplitude_deg: default_amplitude(),
            target_yaw_deg: default_yaw(),
            target_pitch_deg: default_pitch(),
            min_target_distance_m: default_min_distance(),
            true_offset,
            noise_std_deg: 0.0,
            blink_rate_hz: 0.0,
            sampling_rate_hz: default_rate(),
            seed,
            role: GazeRole::Optical,
            residual: CalibrationParams::ZERO,
            scene: None,
        }
    }

    fn script(&self, segments: Vec<Segment>, blinks: Vec<Blink>) -> SimScript {
        SimScript {
            scene: self.scene.clone(),
            head_path: self.head_path.clone(),
            head_follow: self.head_follow,
            segments,
            true_offset: self.true_offset,
            noise_std_deg: self.noise_std_deg,
            blinks,
            sampling_rate_hz: self.sampling_rate_hz,
            seed: self.seed,
            role: self.role,
            residual: self.residual,
        }
    }
}

/// Draws a random surface point in the target cone at `time`.
fn draw_target(recipe: &TraceRecipe, scene: &SceneModel, time: f64, rng: &mut ChaCha8Rng) -> Option<[f64; 3]> {
    let (head, travel, look_at) = recipe.head_path.state_at(time * recipe.head_path.speed_m_per_s);
    let forward = match (look_at, travel) {
        (Some(l), _) if (l - head).norm() > 1e-9 => (l - head).normalize(),
        (_, Some(d)) => d,
        _ => Vector3::z(),
    };
    let yaw = rng.gen_range(-recipe.target_yaw_deg..=recipe.target_yaw_deg).to_radians();
    let pitch = rng
        .gen_range(recipe.target_pitch_deg[0]..=recipe.target_pitch_deg[1])
        .to_radians();
    let right = forward.cross(&Vector3::y());
    if right.norm() < 1e-9 {
        return None;
    }
    let right = right.normalize();
    let dir = Rotation3::new(Vector3::y() * yaw) * (Rotation3::new(right * pitch) * forward);
    let hit = scene.intersect(&Ray::new(head, dir))?;
    (hit.distance >= recipe.min_target_distance_m).then(|| hit.point.coords.into())
}

fn angle_seen_from(recipe: &TraceRecipe, time: f64, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (head, _, _) = recipe.head_path.state_at(time * recipe.head_path.speed_m_per_s);
    let da = nalgebra::Point3::from(*a) - head;
    let db = nalgebra::Point3::from(*b) - head;
    da.angle(&db).to_degrees()
}

/// Draws a script of alternating fixations and saccades that satisfies every
/// simulator check: targets stay visible for their whole fixation, the gaze
/// stays in view and saccades exceed the velocity floor.
pub fn generate_script(recipe: &TraceRecipe, scene: &SceneModel) -> Result<SimScript, SimError> {
    let [fmin, fmax] = recipe.fixation_duration_s;
    if !(fmin > 0.0 && fmax >= fmin && recipe.duration_s > 0.0 && recipe.saccade_duration_s > 0.0) {
        return Err(SimError::InvalidScript("recipe durations must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut segments: Vec<Segment> = Vec::new();
    let mut time = 0.0;
    while time < recipe.duration_s {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_TARGET {
            let duration = rng.gen_range(fmin..=fmax);
            let start = if segments.is_empty() { time } else { time + recipe.saccade_duration_s };
            let Some(target) = draw_target(recipe, scene, start, &mut rng) else {
                continue;
            };
            let mut candidate = segments.clone();
            if let Some(Segment::Fixation { target: prev, .. }) = segments.last() {
                if angle_seen_from(recipe, time, prev, &target) < recipe.min_saccade_amplitude_deg {
                    continue;
                }
                candidate.push(Segment::Saccade {
                    duration: recipe.saccade_duration_s,
                });
            }
            candidate.push(Segment::Fixation { target, duration });
            let script = recipe.script(candidate.clone(), vec![]);
            let sim = Simulator::new(&script, scene)?;
            let from = (time * recipe.sampling_rate_hz).round() as usize;
            if sim.validate_frames(from, sim.frame_count()).is_ok() {
                time = candidate.iter().map(Segment::duration).sum();
                segments = candidate;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SimError::Generation(format!(
                "no valid fixation target found at t = {time:.2} s"
            )));
        }
    }
    let blinks = draw_blinks(recipe, time, &mut rng);
    Ok(recipe.script(segments, blinks))
}

fn draw_blinks(recipe: &TraceRecipe, total: f64, rng: &mut ChaCha8Rng) -> Vec<Blink> {
    let count = (recipe.blink_rate_hz * total).round() as usize;
    let mut blinks: Vec<Blink> = (0..count)
        .map(|_| Blink {
            start: rng.gen_range(0.0..total),
            duration: rng.gen_range(0.1..0.2),
        })
        .collect();
    blinks.sort_by(|a, b| a.start.total_cmp(&b.start));
    blinks
}
