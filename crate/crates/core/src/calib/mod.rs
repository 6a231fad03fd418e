//! Reprojection-error cost over fixation clusters and its global
//! minimization.
//!
//! For a candidate offset `θ`, every frame of a cluster is calibrated, cast
//! into the scene from its own head pose and the resulting point of regard
//! is projected onto the cluster's center camera. A cluster's cost is the
//! mean squared deviation of those image points from their mean; the
//! objective sums the cluster costs. The search box is split into a grid of
//! square regions and differential evolution runs in each region
//! independently; the cheapest regional result wins.

pub mod de;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::CalibrationParams;
use crate::fixation::{FixationCluster, GazeSample};
use crate::geometry::{project, GazeDirection, SceneModel};
use de::{DeOutcome, DeSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("no fixation clusters to optimize over")]
    NoClusters,
    #[error("every candidate offset leaves at least one ray without a scene hit in every cluster")]
    AllInvalid,
    #[error("cluster {cluster} references frame {frame}, beyond the {len}-sample trace")]
    FrameOutOfRange { cluster: usize, frame: usize, len: usize },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Search box `[lo, hi]` for both angles, degrees.
    pub bounds_deg: [f64; 2],
    /// Regions along alpha and beta.
    pub regions: [usize; 2],
    pub population_per_region: usize,
    pub max_generations: usize,
    pub de_weight: f64,
    pub crossover: f64,
    pub tolerance: f64,
    /// Cost charged for a cluster with a missed ray.
    pub invalid_penalty: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            bounds_deg: [-5.0, 5.0],
            regions: [4, 4],
            population_per_region: 16,
            max_generations: 60,
            de_weight: 0.8,
            crossover: 0.9,
            tolerance: 1e-12,
            invalid_penalty: 1.0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        let bad = |m: String| Err(CalibError::InvalidConfig(m));
        let [lo, hi] = self.bounds_deg;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("bounds [{lo}, {hi}] are empty"));
        }
        if self.regions[0] == 0 || self.regions[1] == 0 {
            return bad("need at least one region per axis".into());
        }
        if !(self.de_weight > 0.0 && self.de_weight <= 2.0) {
            return bad(format!("differential weight {} outside (0, 2]", self.de_weight));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return bad(format!("crossover {} outside [0, 1]", self.crossover));
        }
        if self.population_per_region < 4 {
            return bad("rand/1/bin needs a population of at least 4".into());
        }
        if !(self.invalid_penalty >= 0.0) {
            return bad("invalid-cluster penalty must be non-negative".into());
        }
        Ok(())
    }

    /// Region boxes in row-major order (alpha fastest).
    pub fn region_boxes(&self) -> Vec<([f64; 2], [f64; 2])> {
        let [lo, hi] = self.bounds_deg;
        let [na, nb] = self.regions;
        let edge = |i: usize, n: usize| lo + (hi - lo) * i as f64 / n as f64;
        let mut boxes = Vec::with_capacity(na * nb);
        for j in 0..nb {
            for i in 0..na {
                boxes.push(([edge(i, na), edge(j, nb)], [edge(i + 1, na), edge(j + 1, nb)]));
            }
        }
        boxes
    }
}

/// One cluster's contribution to the total cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterCost {
    pub cluster: usize,
    /// Mean squared reprojection error; `None` when a ray missed the scene.
    pub cost: Option<f64>,
    /// Frames whose ray hit the scene in front of the center camera.
    pub valid_frames: usize,
    /// Value added to the total: `cost`, or the penalty when invalid.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub theta: CalibrationParams,
    pub total_cost: f64,
    pub per_cluster: Vec<ClusterCost>,
}

impl CostReport {
    pub fn invalid_clusters(&self) -> usize {
        self.per_cluster.iter().filter(|c| c.cost.is_none()).count()
    }
}

/// Mean squared deviation of image points from their mean.
///
/// Coordinates are taken relative to the first point, so identical points
/// give exactly zero.
pub fn mean_squared_deviation(points: &[GazeDirection]) -> f64 {
    let Some(origin) = points.first() else {
        return 0.0;
    };
    let n = points.len() as f64;
    let (su, sv) = points.iter().fold((0.0, 0.0), |(u, v), p| (u + (p.u - origin.u), v + (p.v - origin.v)));
    let (mu, mv) = (su / n, sv / n);
    points
        .iter()
        .map(|p| (p.u - origin.u - mu).powi(2) + (p.v - origin.v - mv).powi(2))
        .sum::<f64>()
        / n
}

struct ClusterEval {
    cost: Option<f64>,
    valid_frames: usize,
}

/// Evaluates one cluster. With `stop_early` the first missed ray ends the
/// evaluation and `valid_frames` is left incomplete. `hints` holds one
/// triangle hint per cluster frame and is updated with the triangles hit.
fn evaluate_cluster(
    cluster: &FixationCluster,
    samples: &[GazeSample],
    scene: &SceneModel,
    rotation: &nalgebra::Matrix3<f64>,
    stop_early: bool,
    buffer: &mut Vec<GazeDirection>,
    mut hints: Option<&mut [Option<usize>]>,
) -> ClusterEval {
    buffer.clear();
    let camera = &samples[cluster.center].pose;
    let mut valid = true;
    let mut valid_frames = 0;
    for (slot, &frame) in cluster.frames.iter().enumerate() {
        let sample = &samples[frame];
        let calibrated = rotation * sample.gaze.homogeneous();
        let point = if calibrated.z > crate::geometry::MIN_FORWARD_COMPONENT {
            let ray = crate::geometry::Ray::new(sample.pose.position(), sample.pose.to_world_direction(&calibrated));
            let hint = hints.as_ref().and_then(|h| h[slot]);
            let hit = scene.intersect_with_hint(&ray, hint);
            if let (Some(h), Some(hit)) = (hints.as_mut(), &hit) {
                h[slot] = Some(hit.triangle);
            }
            hit.and_then(|hit| project(camera, &hit.point).ok())
        } else {
            None
        };
        match point {
            Some(x) => {
                valid_frames += 1;
                buffer.push(x);
            }
            None => {
                valid = false;
                if stop_early {
                    break;
                }
            }
        }
    }
    ClusterEval {
        cost: (valid && !buffer.is_empty()).then(|| mean_squared_deviation(buffer)),
        valid_frames,
    }
}

fn check_indices(clusters: &[FixationCluster], samples: &[GazeSample]) -> Result<(), CalibError> {
    for (i, c) in clusters.iter().enumerate() {
        if let Some(&frame) = c.frames.iter().chain(std::iter::once(&c.center)).find(|&&f| f >= samples.len()) {
            return Err(CalibError::FrameOutOfRange {
                cluster: i,
                frame,
                len: samples.len(),
            });
        }
    }
    Ok(())
}

/// Mean squared reprojection error of one cluster, or `None` if any of its
/// rays misses the scene under `theta`.
pub fn cluster_cost(
    cluster: &FixationCluster,
    samples: &[GazeSample],
    scene: &SceneModel,
    theta: &CalibrationParams,
) -> Result<Option<f64>, CalibError> {
    check_indices(std::slice::from_ref(cluster), samples)?;
    let mut buffer = Vec::with_capacity(cluster.size());
    Ok(evaluate_cluster(cluster, samples, scene, &theta.rotation(), true, &mut buffer, None).cost)
}

/// Summed cost with a per-cluster breakdown.
pub fn total_cost(
    clusters: &[FixationCluster],
    samples: &[GazeSample],
    scene: &SceneModel,
    theta: &CalibrationParams,
    invalid_penalty: f64,
) -> Result<CostReport, CalibError> {
    if clusters.is_empty() {
        return Err(CalibError::NoClusters);
    }
    check_indices(clusters, samples)?;
    let rotation = theta.rotation();
    let mut buffer = Vec::new();
    let per_cluster: Vec<ClusterCost> = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let eval = evaluate_cluster(c, samples, scene, &rotation, false, &mut buffer, None);
            ClusterCost {
                cluster: i,
                cost: eval.cost,
                valid_frames: eval.valid_frames,
                contribution: eval.cost.unwrap_or(invalid_penalty),
            }
        })
        .collect();
    Ok(CostReport {
        theta: *theta,
        total_cost: per_cluster.iter().map(|c| c.contribution).sum(),
        per_cluster,
    })
}

/// The objective as a reusable closure-friendly evaluator.
pub struct CostFunction<'a> {
    clusters: &'a [FixationCluster],
    samples: &'a [GazeSample],
    scene: &'a SceneModel,
    invalid_penalty: f64,
}

impl<'a> CostFunction<'a> {
    pub fn new(
        clusters: &'a [FixationCluster],
        samples: &'a [GazeSample],
        scene: &'a SceneModel,
        invalid_penalty: f64,
    ) -> Result<Self, CalibError> {
        if clusters.is_empty() {
            return Err(CalibError::NoClusters);
        }
        check_indices(clusters, samples)?;
        Ok(Self {
            clusters,
            samples,
            scene,
            invalid_penalty,
        })
    }

    /// Total cost and whether at least one cluster was valid.
    pub fn evaluate(&self, theta: &CalibrationParams) -> (f64, bool) {
        self.evaluate_hinted(theta, None)
    }

    pub fn value(&self, theta: &CalibrationParams) -> f64 {
        self.evaluate(theta).0
    }

    fn hint_slots(&self) -> Vec<Option<usize>> {
        vec![None; self.clusters.iter().map(FixationCluster::size).sum()]
    }

    /// Same value as [`Self::evaluate`]; `hints` only speeds up ray casting.
    fn evaluate_hinted(&self, theta: &CalibrationParams, mut hints: Option<&mut [Option<usize>]>) -> (f64, bool) {
        let rotation = theta.rotation();
        let mut buffer = Vec::new();
        let mut any_valid = false;
        let mut offset = 0;
        let mut total = 0.0;
        for c in self.clusters {
            let slots = hints.as_mut().map(|h| &mut h[offset..offset + c.size()]);
            offset += c.size();
            total += match evaluate_cluster(c, self.samples, self.scene, &rotation, true, &mut buffer, slots).cost {
                Some(e) => {
                    any_valid = true;
                    e
                }
                None => self.invalid_penalty,
            };
        }
        (total, any_valid)
    }
}

/// Result of one region's search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub theta: CalibrationParams,
    pub cost: f64,
    pub generations: usize,
    pub evaluations: usize,
    /// Whether any evaluated candidate had at least one valid cluster.
    pub saw_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub theta: CalibrationParams,
    pub report: CostReport,
    pub regions: Vec<RegionResult>,
    /// `max − min` of the regional best costs.
    pub cost_spread: f64,
    /// `cost_spread` relative to the largest regional best cost.
    pub relative_spread: f64,
    /// Set when the regional optima are nearly indistinguishable, which
    /// happens when the data cannot constrain the offset (e.g. no head translation).
    pub flat_surface: bool,
    pub evaluations: usize,
}

/// Relative spread below which the cost surface is reported as flat.
pub const FLAT_SURFACE_RELATIVE_SPREAD: f64 = 0.05;

/// Deterministic per-region random stream.
fn region_rng(seed: u64, region: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(region as u64);
    rng
}

/// Runs differential evolution in a single region. Exposed for diagnostics.
pub fn optimize_region(
    cost: &CostFunction<'_>,
    lower: [f64; 2],
    upper: [f64; 2],
    region: usize,
    cfg: &OptimizerConfig,
) -> RegionResult {
    let settings = DeSettings {
        population: cfg.population_per_region,
        max_generations: cfg.max_generations,
        weight: cfg.de_weight,
        crossover: cfg.crossover,
        tolerance: cfg.tolerance,
    };
    let mut saw_valid = false;
    let mut hints = cost.hint_slots();
    let mut rng = region_rng(cfg.seed, region);
    let DeOutcome {
        best,
        cost: best_cost,
        generations,
        evaluations,
        ..
    } = de::minimize(
        |x: &[f64; 2]| {
            let (value, valid) = cost.evaluate_hinted(&CalibrationParams::new(x[0], x[1]), Some(&mut hints));
            saw_valid |= valid;
            value
        },
        lower,
        upper,
        &settings,
        &mut rng,
    );
    RegionResult {
        lower,
        upper,
        theta: CalibrationParams::new(best[0], best[1]),
        cost: best_cost,
        generations,
        evaluations,
        saw_valid,
    }
}

/// Global minimization of the summed cluster cost over the search box.
pub fn optimize(
    clusters: &[FixationCluster],
    samples: &[GazeSample],
    scene: &SceneModel,
    cfg: &OptimizerConfig,
) -> Result<Calibration, CalibError> {
    cfg.validate()?;
    let cost = CostFunction::new(clusters, samples, scene, cfg.invalid_penalty)?;
    let regions: Vec<RegionResult> = cfg
        .region_boxes()
        .into_par_iter()
        .enumerate()
        .map(|(r, (lower, upper))| optimize_region(&cost, lower, upper, r, cfg))
        .collect();
    if !regions.iter().any(|r| r.saw_valid) {
        return Err(CalibError::AllInvalid);
    }
    let best = regions
        .iter()
        .min_by(|a, b| {
            a.cost
                .total_cmp(&b.cost)
                .then(a.theta.alpha.total_cmp(&b.theta.alpha))
                .then(a.theta.beta.total_cmp(&b.theta.beta))
        })
        .expect("at least one region");
    let theta = best.theta;
    let (lo, hi) = regions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.cost), hi.max(r.cost)));
    let cost_spread = hi - lo;
    let relative_spread = if hi > 0.0 { cost_spread / hi } else { 0.0 };
    let report = total_cost(clusters, samples, scene, &theta, cfg.invalid_penalty)?;
    Ok(Calibration {
        theta,
        report,
        evaluations: regions.iter().map(|r| r.evaluations).sum(),
        regions,
        cost_spread,
        relative_spread,
        flat_surface: relative_spread < FLAT_SURFACE_RELATIVE_SPREAD,
    })
}
