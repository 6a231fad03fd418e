//! Property suite shared by the `properties` and `acceptance` targets. Every
//! property runs [`CASES`] generated cases from a fixed-seed runner.

use std::sync::OnceLock;

use gazecal::baseline::{fit_regression, synthesize_session, Distortion, MarkerGrid, SessionRecipe};
use gazecal::calib::{optimize, optimize_region, cluster_cost, total_cost, CostFunction, OptimizerConfig};
use gazecal::eye::{angular_error, apply_offset, remove_offset, CalibrationParams};
use gazecal::experiment::{run_experiment, ExperimentKind, ExperimentSpec, TraceSource};
use gazecal::fixation::{
    detect_fixations, filter_blinks, idt3d_condition, ivt_condition, Algorithm, DetectorConfig, FilteredTrace,
    FixationCluster, GazeSample,
};
use gazecal::geometry::{inverse_project, project, GazeDirection, HeadPose, MeshBuilder, Ray, SceneModel};
use gazecal::io::{read_trace, save_dataset, write_trace, RunConfig};
use gazecal::pipeline::{calibrate, CalibrateOptions, Mode};
use gazecal::synth::{
    cumulative_distance, furnished_room, generate_script, simulate, GazeRole, HeadPath, Segment, SegmentKind, SimScript,
    TraceDataset, TraceRecipe, SACCADE_FLOOR_DEG_PER_S,
};
use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use crate::common::{head_fixed_trace, plane, reference_detect_2d, square_loop};

pub const CASES: u32 = 100;

pub type Property = fn() -> Result<(), String>;

/// Every property, by name.
pub const ALL: &[(&str, Property)] = &[
    ("geometry_round_trip", geometry_round_trip),
    ("geometry_nearest_hit", geometry_nearest_hit),
    ("geometry_rigid_invariance", geometry_rigid_invariance),
    ("geometry_bvh_equivalence", geometry_bvh_equivalence),
    ("geometry_pose_orthonormality", geometry_pose_orthonormality),
    ("geometry_gaze_normalization", geometry_gaze_normalization),
    ("eye_group_property", eye_group_property),
    ("eye_zero_identity", eye_zero_identity),
    ("eye_alpha_only_error", eye_alpha_only_error),
    ("eye_rotation_orthonormal", eye_rotation_orthonormal),
    ("fixation_head_fixed_idt", fixation_head_fixed_idt),
    ("fixation_head_fixed_ivdt", fixation_head_fixed_ivdt),
    ("fixation_ivdt_satisfies_both", fixation_ivdt_satisfies_both),
    ("fixation_determinism", fixation_determinism),
    ("fixation_ivt_theta_independence", fixation_ivt_theta_independence),
    ("fixation_dispersion_monotonicity", fixation_dispersion_monotonicity),
    ("fixation_cluster_structure", fixation_cluster_structure),
    ("fixation_blink_filter", fixation_blink_filter),
    ("calib_non_negativity", calib_non_negativity),
    ("calib_zero_iff_single_point", calib_zero_iff_single_point),
    ("calib_oracle_minimality", calib_oracle_minimality),
    ("calib_seed_determinism", calib_seed_determinism),
    ("calib_region_soundness", calib_region_soundness),
    ("calib_penalty_consistency", calib_penalty_consistency),
    ("synth_offset_round_trip", synth_offset_round_trip),
    ("synth_noise_statistics", synth_noise_statistics),
    ("synth_label_faithfulness", synth_label_faithfulness),
    ("synth_seed_determinism", synth_seed_determinism),
    ("synth_label_coverage", synth_label_coverage),
    ("synth_cumulative_distance", synth_cumulative_distance),
    ("baseline_identity_fixed_point", baseline_identity_fixed_point),
    ("baseline_split_integrity", baseline_split_integrity),
    ("baseline_training_error", baseline_training_error),
    ("baseline_split_partition", baseline_split_partition),
    ("io_trace_round_trip", io_trace_round_trip),
    ("io_config_round_trip", io_config_round_trip),
    ("io_report_determinism", io_report_determinism),
    ("io_experiment_leaves_inputs", io_experiment_leaves_inputs),
];

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        max_shrink_iters: 64,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn room() -> &'static SceneModel {
    static ROOM: OnceLock<SceneModel> = OnceLock::new();
    ROOM.get_or_init(furnished_room)
}

fn theta_in(limit: f64) -> impl Strategy<Value = CalibrationParams> {
    (-limit..=limit, -limit..=limit).prop_map(|(a, b)| CalibrationParams::new(a, b))
}

fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Rotation3::new(Vector3::new(x, y, z)))
}

fn pose_in_room() -> impl Strategy<Value = HeadPose> {
    (rotation(), -3.0..4.0f64, 0.3..2.7f64, -2.5..5.0f64)
        .prop_map(|(r, x, y, z)| HeadPose::from_rotation(r, Vector3::new(x, y, z)))
}

fn gaze(limit: f64) -> impl Strategy<Value = GazeDirection> {
    (-limit..limit, -limit..limit).prop_map(|(u, v)| GazeDirection::new(u, v))
}

/// Short noiseless-or-noisy walk through the furnished room.
fn room_trace(seed: u64, theta: CalibrationParams, noise: f64, duration: f64) -> TraceDataset {
    let mut recipe = TraceRecipe::new(square_loop(1.0, 1.0), duration, theta, seed);
    recipe.noise_std_deg = noise;
    let script = generate_script(&recipe, room()).expect("recipe generates");
    simulate(&script, room()).expect("script simulates")
}

/// Clusters straight from the ground-truth fixation labels.
fn labelled_clusters(data: &TraceDataset) -> Vec<FixationCluster> {
    data.ground_truth
        .as_ref()
        .unwrap()
        .fixations()
        .filter(|s| s.end - s.start >= 4)
        .map(|s| FixationCluster {
            frames: (s.start..s.end).collect(),
            center: (s.start + s.end) / 2,
        })
        .collect()
}

/// Fixed noisy trace with its IVDT3D clusters, shared by optimizer properties.
fn optimizer_fixture() -> &'static (TraceDataset, Vec<FixationCluster>) {
    static FIXTURE: OnceLock<(TraceDataset, Vec<FixationCluster>)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let theta = CalibrationParams::new(1.5, -2.0);
        let data = room_trace(21, theta, 0.2, 3.0);
        let trace = FilteredTrace::unfiltered(&data.samples);
        let cfg = DetectorConfig::default().with_dispersion_deg(1.5);
        let clusters = detect_fixations(&trace, Algorithm::Ivdt3d, Some(room()), &theta, &cfg).unwrap();
        assert!(clusters.len() >= 3, "fixture needs several clusters");
        (data, clusters)
    })
}

fn small_optimizer() -> impl Strategy<Value = OptimizerConfig> {
    (any::<u64>(), 1usize..=2, 1usize..=2, 4usize..=8, 2usize..=8).prop_map(|(seed, ra, rb, pop, gens)| OptimizerConfig {
        regions: [ra, rb],
        population_per_region: pop,
        max_generations: gens,
        seed,
        ..OptimizerConfig::default()
    })
}

fn fixation_strategy() -> impl Strategy<Value = (Vec<(usize, f64, f64, f64)>, u64)> {
    (
        prop::collection::vec((4usize..25, -0.3..0.3f64, -0.3..0.3f64, 0.0..0.008f64), 2..8),
        any::<u64>(),
    )
}

fn same_clusters(a: &[FixationCluster], b: &[FixationCluster]) -> Result<(), TestCaseError> {
    prop_assert_eq!(a, b);
    Ok(())
}

// ---------------------------------------------------------------- geometry

pub fn geometry_round_trip() -> Result<(), String> {
    check((pose_in_room(), gaze(1.5)), |(pose, g)| {
        let hit = inverse_project(&pose, &g, room());
        prop_assert!(hit.is_some(), "closed room must be hit");
        let back = project(&pose, &hit.unwrap()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!((back.u - g.u).abs() < 1e-9 && (back.v - g.v).abs() < 1e-9, "{g:?} -> {back:?}");
        Ok(())
    })
}

pub fn geometry_nearest_hit() -> Result<(), String> {
    let mut b = MeshBuilder::new();
    for z in [3.0, 2.0] {
        b.quad([
            Point3::new(-20.0, -20.0, z),
            Point3::new(20.0, -20.0, z),
            Point3::new(20.0, 20.0, z),
            Point3::new(-20.0, 20.0, z),
        ]);
    }
    let scene = b.build().unwrap();
    check((gaze(2.0), -1.0..1.0f64, -1.0..1.0f64, -1.0..1.5f64), |(g, x, y, z)| {
        let pose = HeadPose::from_rotation(Rotation3::identity(), Vector3::new(x, y, z));
        let hit = inverse_project(&pose, &g, &scene).expect("planes span the view");
        prop_assert!((hit.z - 2.0).abs() < 1e-9, "hit {hit:?}");
        Ok(())
    })
}

pub fn geometry_rigid_invariance() -> Result<(), String> {
    let strategy = (
        pose_in_room(),
        rotation(),
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64),
        gaze(1.0),
        0.3..8.0f64,
    );
    check(strategy, |(pose, r, (tx, ty, tz), g, depth)| {
        let transform = Isometry3::from_parts(Translation3::new(tx, ty, tz), UnitQuaternion::from_rotation_matrix(&r));
        let moved = pose.transformed(&transform);
        let point = pose.position() + pose.to_world_direction(&(g.unit().into_inner() * depth));
        let a = project(&pose, &point).unwrap();
        let b = project(&moved, &(transform * point)).unwrap();
        prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        let scene = room().transformed(&transform);
        let hit = inverse_project(&moved, &g, &scene).expect("room is closed");
        let back = project(&moved, &hit).unwrap();
        prop_assert!((back.u - g.u).abs() < 1e-9 && (back.v - g.v).abs() < 1e-9);
        let original = inverse_project(&pose, &g, room()).expect("room is closed");
        prop_assert!(((transform * original) - hit).norm() < 1e-9 * (1.0 + hit.coords.norm()));
        Ok(())
    })
}

pub fn geometry_bvh_equivalence() -> Result<(), String> {
    let ray = ((-8.0..9.0f64, -3.0..6.0f64, -7.0..10.0f64), (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64));
    check(prop::collection::vec(ray, 10), |rays| {
        for ((x, y, z), (dx, dy, dz)) in rays {
            let d = Vector3::new(dx, dy, dz);
            if d.norm() < 1e-3 {
                continue;
            }
            let ray = Ray::new(Point3::new(x, y, z), d);
            match (room().intersect(&ray), room().intersect_exhaustive(&ray)) {
                (None, None) => {}
                (Some(a), Some(b)) => prop_assert!((a.distance - b.distance).abs() < 1e-9, "{a:?} vs {b:?}"),
                (a, b) => prop_assert!(false, "indexed {a:?} vs exhaustive {b:?}"),
            }
        }
        Ok(())
    })
}

pub fn geometry_pose_orthonormality() -> Result<(), String> {
    check((rotation(), 0..9usize, 1e-6..1e-2f64), |(r, entry, eps)| {
        let m = *r.matrix();
        prop_assert!(HeadPose::new(m, Vector3::zeros()).is_ok());
        let mut bent = m;
        bent[(entry / 3, entry % 3)] += eps;
        prop_assert!(HeadPose::new(bent, Vector3::zeros()).is_err());
        let mirrored = m * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        prop_assert!(HeadPose::new(mirrored, Vector3::zeros()).is_err());
        Ok(())
    })
}

pub fn geometry_gaze_normalization() -> Result<(), String> {
    check((-5.0..5.0f64, -5.0..5.0f64, 0.01..10.0f64), |(x, y, z)| {
        let g = GazeDirection::from_vector(&Vector3::new(x, y, z)).unwrap();
        prop_assert_eq!(g.homogeneous().z, 1.0);
        prop_assert!(g.is_finite());
        prop_assert!(GazeDirection::from_vector(&Vector3::new(x, y, -z)).is_err());
        Ok(())
    })
}

// ---------------------------------------------------------------- eye model

pub fn eye_group_property() -> Result<(), String> {
    check((gaze(1.0), theta_in(10.0)), |(g, theta)| {
        let there = remove_offset(&apply_offset(&g, &theta).unwrap(), &theta).unwrap();
        let back = apply_offset(&remove_offset(&g, &theta).unwrap(), &theta).unwrap();
        for h in [there, back] {
            prop_assert!((h.u - g.u).abs() < 1e-12 && (h.v - g.v).abs() < 1e-12, "{g:?} -> {h:?}");
        }
        Ok(())
    })
}

pub fn eye_zero_identity() -> Result<(), String> {
    check(gaze(3.0), |g| {
        prop_assert_eq!(apply_offset(&g, &CalibrationParams::ZERO).unwrap(), g);
        prop_assert_eq!(remove_offset(&g, &CalibrationParams::ZERO).unwrap(), g);
        Ok(())
    })
}

pub fn eye_alpha_only_error() -> Result<(), String> {
    check(-5.0..=5.0f64, |alpha| {
        let g = apply_offset(&GazeDirection::FORWARD, &CalibrationParams::new(alpha, 0.0)).unwrap();
        prop_assert!((angular_error(&GazeDirection::FORWARD, &g) - alpha.abs()).abs() < 1e-9);
        Ok(())
    })
}

pub fn eye_rotation_orthonormal() -> Result<(), String> {
    check(theta_in(90.0), |theta| {
        let r = theta.rotation();
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        Ok(())
    })
}

// ---------------------------------------------------------------- detection

fn head_fixed_equivalence(algo: Algorithm) -> Result<(), String> {
    let scene = plane(2.0, 100.0);
    let cfg = DetectorConfig::default();
    check((fixation_strategy(), theta_in(3.0)), |((fixations, seed), theta)| {
        let samples = head_fixed_trace(&fixations, seed);
        let trace = FilteredTrace::unfiltered(&samples);
        let got = detect_fixations(&trace, algo, Some(&scene), &theta, &cfg).unwrap();
        same_clusters(&got, &reference_detect_2d(&samples, algo, &theta, &cfg))
    })
}

pub fn fixation_head_fixed_idt() -> Result<(), String> {
    head_fixed_equivalence(Algorithm::Idt3d)
}

pub fn fixation_head_fixed_ivdt() -> Result<(), String> {
    head_fixed_equivalence(Algorithm::Ivdt3d)
}

fn trace_strategy() -> impl Strategy<Value = (u64, CalibrationParams, f64)> {
    (any::<u64>(), theta_in(5.0), 0.0..0.3f64)
}

pub fn fixation_ivdt_satisfies_both() -> Result<(), String> {
    let cfg = DetectorConfig::default().with_dispersion_deg(1.5);
    check(trace_strategy(), |(seed, theta, noise)| {
        let data = room_trace(seed, theta, noise, 2.5);
        let trace = FilteredTrace::unfiltered(&data.samples);
        let clusters = detect_fixations(&trace, Algorithm::Ivdt3d, Some(room()), &theta, &cfg).unwrap();
        for c in &clusters {
            let window: Vec<GazeSample> = c.frames.iter().map(|&k| data.samples[k]).collect();
            let calibrated: Vec<GazeSample> = window
                .iter()
                .map(|s| GazeSample {
                    gaze: apply_offset(&s.gaze, &theta).unwrap(),
                    ..*s
                })
                .collect();
            prop_assert!(ivt_condition(&calibrated, &cfg), "velocity fails on {:?}", c.frames);
            prop_assert!(idt3d_condition(&window, room(), &theta, &cfg), "dispersion fails on {:?}", c.frames);
        }
        Ok(())
    })
}

pub fn fixation_determinism() -> Result<(), String> {
    let cfg = DetectorConfig::default().with_dispersion_deg(1.5);
    check((trace_strategy(), 0..3usize), |((seed, theta, noise), algo)| {
        let algo = Algorithm::ALL[algo];
        let data = room_trace(seed, theta, noise, 2.0);
        let trace = filter_blinks(&data.samples, 0.5);
        let a = detect_fixations(&trace, algo, Some(room()), &theta, &cfg).unwrap();
        let b = detect_fixations(&trace, algo, Some(room()), &theta, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        Ok(())
    })
}

pub fn fixation_ivt_theta_independence() -> Result<(), String> {
    let strategy = (
        prop::collection::vec((4usize..25, -0.3..0.3f64, -0.3..0.3f64, 0.0..0.02f64), 2..8),
        any::<u64>(),
        theta_in(5.0),
    );
    let cfg = DetectorConfig::default();
    check(strategy, |(fixations, seed, theta)| {
        let samples = head_fixed_trace(&fixations, seed);
        let trace = FilteredTrace::unfiltered(&samples);
        let plain = detect_fixations(&trace, Algorithm::Ivt, None, &CalibrationParams::ZERO, &cfg).unwrap();
        let rotated = detect_fixations(&trace, Algorithm::Ivt, None, &theta, &cfg).unwrap();
        let frames = |c: &[FixationCluster]| c.iter().map(|c| c.frames.clone()).collect::<Vec<_>>();
        prop_assert_eq!(frames(&plain), frames(&rotated));
        Ok(())
    })
}

fn coverage(clusters: &[FixationCluster], n: usize) -> Vec<bool> {
    let mut covered = vec![false; n];
    for c in clusters {
        for &k in &c.frames {
            covered[k] = true;
        }
    }
    covered
}

/// Checked on noiseless traces with thresholds below the first frame step of
/// a 10° saccade (about 3°). Beyond either limit the greedy jump past an
/// emitted cluster can shift later windows so that a larger threshold
/// uncovers frames.
pub fn fixation_dispersion_monotonicity() -> Result<(), String> {
    check((any::<u64>(), theta_in(5.0), 0.3..1.4f64, 1.0..2.0f64), |(seed, theta, d, scale)| {
        let data = room_trace(seed, theta, 0.0, 2.5);
        let trace = FilteredTrace::unfiltered(&data.samples);
        let n = data.samples.len();
        let run = |deg: f64| {
            let cfg = DetectorConfig::default().with_dispersion_deg(deg);
            coverage(&detect_fixations(&trace, Algorithm::Idt3d, Some(room()), &theta, &cfg).unwrap(), n)
        };
        let (small, large) = (run(d), run(d * scale));
        for k in 0..n {
            prop_assert!(!small[k] || large[k], "frame {k} lost when D_th grew from {d}° to {}°", d * scale);
        }
        Ok(())
    })
}

pub fn fixation_cluster_structure() -> Result<(), String> {
    let strategy = (trace_strategy(), 0..3usize, prop::collection::vec((0.0..2.5f64, 0.05..0.3f64), 0..3));
    check(strategy, |((seed, theta, noise), algo, blinks)| {
        let algo = Algorithm::ALL[algo];
        let mut data = room_trace(seed, theta, noise, 2.5);
        for (start, duration) in blinks {
            for s in &mut data.samples {
                if s.timestamp >= start && s.timestamp < start + duration {
                    s.openness = 0.0;
                }
            }
        }
        let cfg = DetectorConfig::default().with_dispersion_deg(1.5);
        let trace = filter_blinks(&data.samples, cfg.openness_cutoff);
        let Ok(clusters) = detect_fixations(&trace, algo, Some(room()), &theta, &cfg) else {
            prop_assert!(trace.len() < cfg.window_size());
            return Ok(());
        };
        let mut previous_end = None;
        for c in &clusters {
            prop_assert!(c.size() >= cfg.window_size());
            prop_assert!(c.frames.contains(&c.center));
            prop_assert!(c.frames.windows(2).all(|w| w[0] < w[1]));
            let positions: Vec<usize> = c.frames.iter().map(|f| trace.source_indices.binary_search(f).unwrap()).collect();
            prop_assert!(positions.windows(2).all(|w| w[1] == w[0] + 1), "not contiguous in the filtered trace");
            prop_assert!(c.frames.iter().all(|&f| data.samples[f].openness >= cfg.openness_cutoff));
            if let Some(end) = previous_end {
                prop_assert!(c.first() > end, "clusters overlap");
            }
            previous_end = Some(c.last());
        }
        Ok(())
    })
}

pub fn fixation_blink_filter() -> Result<(), String> {
    check((prop::collection::vec(0.0..=1.0f64, 0..200), 0.0..=1.0f64), |(openness, cutoff)| {
        let samples: Vec<GazeSample> = openness
            .iter()
            .enumerate()
            .map(|(i, &o)| GazeSample {
                timestamp: i as f64 / 50.0,
                gaze: GazeDirection::FORWARD,
                pose: HeadPose::identity(),
                openness: o,
            })
            .collect();
        let kept = filter_blinks(&samples, cutoff);
        let expected: Vec<usize> = (0..samples.len()).filter(|&i| openness[i] >= cutoff).collect();
        prop_assert_eq!(&kept.source_indices, &expected);
        prop_assert!(kept.samples.iter().zip(&expected).all(|(s, &i)| *s == samples[i]));
        Ok(())
    })
}

// ---------------------------------------------------------------- optimizer

pub fn calib_non_negativity() -> Result<(), String> {
    let (data, clusters) = optimizer_fixture();
    check((theta_in(5.0), 0.5..10.0f64), |(theta, penalty)| {
        let report = total_cost(clusters, &data.samples, room(), &theta, penalty).unwrap();
        prop_assert!(report.total_cost >= 0.0);
        let sum: f64 = report.per_cluster.iter().map(|c| c.contribution).sum();
        prop_assert!((report.total_cost - sum).abs() <= 1e-12 * report.total_cost.max(f64::MIN_POSITIVE));
        for c in &report.per_cluster {
            prop_assert!(c.cost.is_none_or(|v| v >= 0.0));
            let single = cluster_cost(&clusters[c.cluster], &data.samples, room(), &theta).unwrap();
            prop_assert_eq!(single, c.cost);
        }
        Ok(())
    })
}

pub fn calib_zero_iff_single_point() -> Result<(), String> {
    check((pose_in_room(), gaze(0.8), 2usize..12, theta_in(5.0), 1e-4..0.05f64), |(pose, g, n, theta, step)| {
        let sample = GazeSample {
            timestamp: 0.0,
            gaze: g,
            pose,
            openness: 1.0,
        };
        let mut samples: Vec<GazeSample> = (0..n).map(|i| GazeSample { timestamp: i as f64 / 50.0, ..sample }).collect();
        let cluster = FixationCluster {
            frames: (0..n).collect(),
            center: 0,
        };
        let same = cluster_cost(&cluster, &samples, room(), &theta).unwrap();
        prop_assert_eq!(same, Some(0.0));
        samples[n - 1].gaze = GazeDirection::new(g.u + step, g.v);
        let spread = cluster_cost(&cluster, &samples, room(), &theta).unwrap();
        prop_assert!(spread.is_some_and(|c| c > 0.0), "{spread:?}");
        Ok(())
    })
}

/// Box room used by the grid oracle: few triangles keep a full grid scan cheap.
fn box_room() -> &'static SceneModel {
    static BOX: OnceLock<SceneModel> = OnceLock::new();
    BOX.get_or_init(|| {
        let mut b = MeshBuilder::new();
        b.cuboid(Point3::new(-3.0, 0.0, -3.0), Point3::new(3.0, 3.0, 4.0));
        b.cuboid(Point3::new(1.0, 0.0, 1.5), Point3::new(1.8, 1.0, 2.3));
        b.build().unwrap()
    })
}

pub fn calib_oracle_minimality() -> Result<(), String> {
    check((any::<u64>(), theta_in(4.5)), |(seed, truth)| {
        let mut recipe = TraceRecipe::new(square_loop(0.8, 1.0), 0.8, truth, seed);
        recipe.fixation_duration_s = [0.12, 0.16];
        recipe.min_saccade_amplitude_deg = 20.0;
        let script = generate_script(&recipe, box_room()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let data = simulate(&script, box_room()).unwrap();
        let clusters = labelled_clusters(&data);
        prop_assume!(clusters.len() >= 2);
        let cost = CostFunction::new(&clusters, &data.samples, box_room(), 1.0).unwrap();
        // coarse 0.25° sweep, then the 0.05° grid around its minimum
        let mut best = (f64::INFINITY, CalibrationParams::ZERO);
        for i in 0..=40 {
            for j in 0..=40 {
                let theta = CalibrationParams::new(-5.0 + 0.25 * i as f64, -5.0 + 0.25 * j as f64);
                let c = cost.value(&theta);
                if c < best.0 {
                    best = (c, theta);
                }
            }
        }
        let coarse = best.1;
        for i in -10..=10 {
            for j in -10..=10 {
                let theta = CalibrationParams::new(
                    (coarse.alpha + 0.05 * i as f64).clamp(-5.0, 5.0),
                    (coarse.beta + 0.05 * j as f64).clamp(-5.0, 5.0),
                );
                let c = cost.value(&theta);
                if c < best.0 {
                    best = (c, theta);
                }
            }
        }
        prop_assert!(best.1.max_component_error(&truth) <= 0.1, "grid minimum {:?} vs truth {truth:?}", best.1);
        let de = optimize(&clusters, &data.samples, box_room(), &OptimizerConfig { seed, ..OptimizerConfig::default() }).unwrap();
        prop_assert!(de.theta.max_component_error(&best.1) <= 0.1, "DE {:?} vs grid {:?}", de.theta, best.1);
        Ok(())
    })
}

pub fn calib_seed_determinism() -> Result<(), String> {
    let (data, clusters) = optimizer_fixture();
    check(small_optimizer(), |cfg| {
        let a = optimize(clusters, &data.samples, room(), &cfg).unwrap();
        let b = optimize(clusters, &data.samples, room(), &cfg).unwrap();
        prop_assert_eq!(a.theta.alpha.to_bits(), b.theta.alpha.to_bits());
        prop_assert_eq!(a.theta.beta.to_bits(), b.theta.beta.to_bits());
        prop_assert_eq!(a, b);
        Ok(())
    })
}

pub fn calib_region_soundness() -> Result<(), String> {
    let (data, clusters) = optimizer_fixture();
    check((small_optimizer(), any::<prop::sample::Index>()), |(cfg, pick)| {
        let result = optimize(clusters, &data.samples, room(), &cfg).unwrap();
        for r in &result.regions {
            prop_assert!(result.report.total_cost <= r.cost);
        }
        let boxes = cfg.region_boxes();
        let region = pick.index(boxes.len());
        let cost = CostFunction::new(clusters, &data.samples, room(), cfg.invalid_penalty).unwrap();
        let alone = optimize_region(&cost, boxes[region].0, boxes[region].1, region, &cfg);
        prop_assert!(result.report.total_cost <= alone.cost);
        Ok(())
    })
}

pub fn calib_penalty_consistency() -> Result<(), String> {
    let (data, clusters) = optimizer_fixture();
    let truth = data.ground_truth.as_ref().unwrap().true_offset;
    let near = total_cost(clusters, &data.samples, room(), &truth, 1.0).unwrap();
    assert_eq!(near.invalid_clusters(), 0, "fixture must be valid around the truth");
    check((small_optimizer(), 1.0..1000.0f64), |(cfg, penalty)| {
        let base = optimize(clusters, &data.samples, room(), &cfg).unwrap();
        let heavy = optimize(clusters, &data.samples, room(), &OptimizerConfig { invalid_penalty: penalty, ..cfg }).unwrap();
        prop_assert_eq!(base.theta, heavy.theta);
        Ok(())
    })
}

// ---------------------------------------------------------------- simulator

pub fn synth_offset_round_trip() -> Result<(), String> {
    check((any::<u64>(), theta_in(5.0)), |(seed, theta)| {
        let data = room_trace(seed, theta, 0.0, 2.0);
        let truth = data.ground_truth.as_ref().unwrap();
        for seg in truth.fixations() {
            let target = Point3::from(seg.target.unwrap());
            for k in seg.start..seg.end {
                let s = &data.samples[k];
                let hit = inverse_project(&s.pose, &apply_offset(&s.gaze, &theta).unwrap(), room()).unwrap();
                prop_assert!((hit - target).norm() < 1e-6, "frame {k}: {}", (hit - target).norm());
            }
        }
        Ok(())
    })
}

pub fn synth_noise_statistics() -> Result<(), String> {
    check((any::<u64>(), 0.1..2.0f64, theta_in(5.0)), |(seed, sigma, theta)| {
        let script = SimScript {
            scene: None,
            head_path: HeadPath::stationary([0.0, 1.6, 0.0], [0.0, 1.6, 5.0]),
            head_follow: 0.5,
            segments: vec![Segment::Fixation {
                target: [0.5, 1.0, 6.0],
                duration: 200.0,
            }],
            true_offset: theta,
            noise_std_deg: sigma,
            blinks: vec![],
            sampling_rate_hz: 50.0,
            seed,
            role: GazeRole::Optical,
            residual: CalibrationParams::ZERO,
        };
        let data = simulate(&script, room()).unwrap();
        prop_assert!(data.samples.len() >= 10_000);
        let pose = data.samples[0].pose;
        let exact = pose.rotation().tr_mul(&(Vector3::new(0.5, 1.0, 6.0) - pose.translation()).normalize());
        let e1 = exact.cross(&Vector3::x()).normalize();
        let e2 = exact.cross(&e1);
        let (mut sum, mut sq1, mut sq2) = (0.0, 0.0, 0.0);
        for s in &data.samples {
            let d = apply_offset(&s.gaze, &theta).unwrap().unit().into_inner();
            sum += d.angle(&exact).to_degrees();
            sq1 += d.dot(&e1).asin().to_degrees().powi(2);
            sq2 += d.dot(&e2).asin().to_degrees().powi(2);
        }
        let n = data.samples.len() as f64;
        let rayleigh_mean = sigma * (std::f64::consts::PI / 2.0).sqrt();
        prop_assert!((sum / n / rayleigh_mean - 1.0).abs() < 0.05, "mean {} vs {rayleigh_mean}", sum / n);
        for sq in [sq1, sq2] {
            prop_assert!(((sq / n).sqrt() / sigma - 1.0).abs() < 0.05, "axis std {} vs {sigma}", (sq / n).sqrt());
        }
        Ok(())
    })
}

pub fn synth_label_faithfulness() -> Result<(), String> {
    check((any::<u64>(), theta_in(5.0)), |(seed, theta)| {
        let data = room_trace(seed, theta, 0.0, 2.5);
        let truth = data.ground_truth.as_ref().unwrap();
        let world = |s: &GazeSample| s.pose.to_world_direction(&apply_offset(&s.gaze, &theta).unwrap().unit());
        let saccade = |k: usize| truth.label_of(k).is_some_and(|l| l.kind == SegmentKind::Saccade);
        for k in 1..data.samples.len() {
            if saccade(k) || saccade(k - 1) {
                let (a, b) = (&data.samples[k - 1], &data.samples[k]);
                let velocity = world(a).angle(&world(b)).to_degrees() / (b.timestamp - a.timestamp);
                prop_assert!(velocity >= SACCADE_FLOOR_DEG_PER_S, "frame {k}: {velocity} deg/s");
            }
        }
        Ok(())
    })
}

pub fn synth_seed_determinism() -> Result<(), String> {
    check((any::<u64>(), theta_in(5.0), 0.0..1.0f64), |(seed, theta, noise)| {
        let mut recipe = TraceRecipe::new(square_loop(1.0, 1.0), 1.5, theta, seed);
        recipe.noise_std_deg = noise;
        recipe.blink_rate_hz = 0.5;
        let a = simulate(&generate_script(&recipe, room()).unwrap(), room()).unwrap();
        let b = simulate(&generate_script(&recipe, room()).unwrap(), room()).unwrap();
        let bytes = |d: &TraceDataset| {
            let mut out = Vec::new();
            write_trace(&d.samples, &mut out).unwrap();
            out.extend(serde_json::to_vec(&d.ground_truth).unwrap());
            out
        };
        prop_assert_eq!(bytes(&a), bytes(&b));
        Ok(())
    })
}

pub fn synth_label_coverage() -> Result<(), String> {
    check((any::<u64>(), theta_in(5.0)), |(seed, theta)| {
        let mut recipe = TraceRecipe::new(square_loop(1.0, 1.0), 2.0, theta, seed);
        recipe.blink_rate_hz = 0.5;
        let script = generate_script(&recipe, room()).unwrap();
        let data = simulate(&script, room()).unwrap();
        let segments = &data.ground_truth.as_ref().unwrap().segments;
        prop_assert_eq!(segments.first().map(|s| s.start), Some(0));
        prop_assert_eq!(segments.last().map(|s| s.end), Some(data.samples.len()));
        prop_assert!(segments.windows(2).all(|w| w[0].end == w[1].start));
        prop_assert!(segments.iter().all(|s| s.end > s.start));
        let scripted: f64 = script.segments.iter().map(Segment::duration).sum();
        prop_assert!((scripted * script.sampling_rate_hz - data.samples.len() as f64).abs() <= 1.0);
        Ok(())
    })
}

pub fn synth_cumulative_distance() -> Result<(), String> {
    let mut b = MeshBuilder::new();
    b.quad([
        Point3::new(-10.0, 0.0, -10.0),
        Point3::new(10.0, 0.0, -10.0),
        Point3::new(10.0, 0.0, 10.0),
        Point3::new(-10.0, 0.0, 10.0),
    ]);
    let floor = b.build().unwrap();
    check((0.2..1.5f64, 10usize..80), |(half, frames_per_side)| {
        let rate = 50.0;
        let speed = 2.0 * half * rate / frames_per_side as f64;
        let frames = 4 * frames_per_side;
        let script = SimScript {
            scene: None,
            head_path: square_loop(half, speed),
            head_follow: 1.0,
            segments: vec![Segment::Fixation {
                target: [0.0, 0.0, 0.0],
                duration: (frames + 1) as f64 / rate,
            }],
            true_offset: CalibrationParams::ZERO,
            noise_std_deg: 0.0,
            blinks: vec![],
            sampling_rate_hz: rate,
            seed: 0,
            role: GazeRole::Optical,
            residual: CalibrationParams::ZERO,
        };
        let data = simulate(&script, &floor).unwrap();
        prop_assert_eq!(cumulative_distance(&data.samples, 0), 0.0);
        let lap = cumulative_distance(&data.samples, frames);
        prop_assert!((lap - 8.0 * half).abs() < 1e-9, "lap {lap} vs {}", 8.0 * half);
        let half_side = cumulative_distance(&data.samples, frames_per_side / 2);
        prop_assert!((half_side - (frames_per_side / 2) as f64 * speed / rate).abs() < 1e-9);
        Ok(())
    })
}

// ---------------------------------------------------------------- baseline

fn grid() -> impl Strategy<Value = MarkerGrid> {
    (3usize..=7, 3usize..=7, 10.0..40.0f64, -10.0..10.0f64).prop_map(|(rows, cols, fov_deg, below)| MarkerGrid {
        rows,
        cols,
        fov_deg,
        center_below_deg: below,
        distance_m: 1.0,
    })
}

fn affine() -> impl Strategy<Value = Distortion> {
    (
        (-0.05..0.05f64, 0.9..1.1f64, -0.1..0.1f64),
        (-0.05..0.05f64, -0.1..0.1f64, 0.9..1.1f64),
    )
        .prop_map(|((a1, a2, a3), (b1, b2, b3))| Distortion::Affine {
            a: [a1, a2, a3],
            b: [b1, b2, b3],
        })
}

pub fn baseline_identity_fixed_point() -> Result<(), String> {
    check((grid(), any::<u64>()), |(grid, seed)| {
        let session = synthesize_session(&SessionRecipe {
            grid,
            distortion: Distortion::Offset {
                theta: CalibrationParams::ZERO,
            },
            noise_std_deg: 0.0,
            samples_per_marker: 3,
            seed,
        })
        .unwrap();
        let fit = fit_regression(&session.pairs(&session.estimation())).unwrap();
        let identity = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (x, y) in fit.a.iter().chain(&fit.b).zip(identity) {
            prop_assert!((x - y).abs() < 1e-9, "{fit:?}");
        }
        Ok(())
    })
}

pub fn baseline_split_integrity() -> Result<(), String> {
    check((affine(), any::<u64>(), 0.0..1.0f64, -0.5..0.5f64), |(distortion, seed, noise, shift)| {
        let mut session = synthesize_session(&SessionRecipe {
            distortion,
            noise_std_deg: noise,
            samples_per_marker: 10,
            seed,
            ..SessionRecipe::default()
        })
        .unwrap();
        let before = fit_regression(&session.pairs(&session.estimation())).unwrap();
        for &m in &session.evaluation.clone() {
            for g in &mut session.samples[m] {
                *g = GazeDirection::new(g.u + shift, g.v * 3.0 - shift);
            }
        }
        let after = fit_regression(&session.pairs(&session.estimation())).unwrap();
        prop_assert_eq!(before, after);
        Ok(())
    })
}

pub fn baseline_training_error() -> Result<(), String> {
    check((affine(), any::<u64>(), 0.0..1.0f64), |(distortion, seed, noise)| {
        let session = synthesize_session(&SessionRecipe {
            distortion,
            noise_std_deg: noise,
            samples_per_marker: 10,
            seed,
            ..SessionRecipe::default()
        })
        .unwrap();
        let pairs = session.pairs(&session.estimation());
        let fit = fit_regression(&pairs).unwrap();
        let raw: f64 = pairs.iter().map(|(r, t)| r.distance_squared(t)).sum();
        let fitted: f64 = pairs.iter().map(|(r, t)| fit.apply(r).distance_squared(t)).sum();
        prop_assert!(fitted <= raw * (1.0 + 1e-12) + 1e-18, "{fitted} > {raw}");
        Ok(())
    })
}

pub fn baseline_split_partition() -> Result<(), String> {
    check((grid(), any::<u64>()), |(grid, seed)| {
        let session = synthesize_session(&SessionRecipe {
            grid,
            samples_per_marker: 1,
            seed,
            ..SessionRecipe::default()
        })
        .unwrap();
        prop_assert!(session.validate().is_ok());
        let mut all: Vec<usize> = session.estimation();
        all.extend(&session.evaluation);
        all.sort_unstable();
        prop_assert_eq!(all, (0..grid.rows * grid.cols).collect::<Vec<_>>());
        Ok(())
    })
}

// ---------------------------------------------------------------- io

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3..1e3f64, any::<f64>().prop_filter("finite", |x| x.is_finite())]
}

pub fn io_trace_round_trip() -> Result<(), String> {
    let sample = (finite(), finite(), finite(), rotation(), (finite(), finite(), finite()), 0.0..=1.0f64);
    check(prop::collection::vec(sample, 1..300), |rows| {
        let samples: Vec<GazeSample> = rows
            .into_iter()
            .map(|(t, u, v, r, (x, y, z), o)| GazeSample {
                timestamp: t,
                gaze: GazeDirection::new(u, v),
                pose: HeadPose::from_rotation(r, Vector3::new(x, y, z)),
                openness: o,
            })
            .collect();
        let mut buf = Vec::new();
        write_trace(&samples, &mut buf).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            prop_assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
            prop_assert_eq!(a.gaze.u.to_bits(), b.gaze.u.to_bits());
            prop_assert_eq!(a.gaze.v.to_bits(), b.gaze.v.to_bits());
            prop_assert_eq!(a.pose.rotation_row_major().map(f64::to_bits), b.pose.rotation_row_major().map(f64::to_bits));
            prop_assert_eq!(a.pose.translation().map(f64::to_bits), b.pose.translation().map(f64::to_bits));
            prop_assert_eq!(a.openness.to_bits(), b.openness.to_bits());
        }
        Ok(())
    })
}

pub fn io_config_round_trip() -> Result<(), String> {
    let strategy = (50.0..200.0f64, 0.2..2.0f64, 0.1..0.5f64, 25.0..200.0f64, 0..=i64::MAX as u64, 4usize..40, theta_in(5.0));
    check(strategy, |(velocity, dispersion, t_min, rate, seed, pop, prior)| {
        let mut config = RunConfig {
            detector: DetectorConfig {
                velocity_threshold_deg_per_s: velocity,
                min_fixation_time_s: t_min,
                sampling_rate_hz: rate,
                ..DetectorConfig::default().with_dispersion_deg(dispersion)
            },
            prior,
            ..RunConfig::default()
        };
        config.optimizer.seed = seed;
        config.optimizer.population_per_region = pop;
        prop_assert_eq!(RunConfig::parse(&config.to_toml().unwrap()).unwrap(), config);
        config.optimizer.seed = u64::MAX;
        prop_assert!(config.to_toml().is_err());
        Ok(())
    })
}

pub fn io_report_determinism() -> Result<(), String> {
    let (data, _) = optimizer_fixture();
    check((small_optimizer(), 0..3usize, 0..2usize), |(optimizer, algo, mode)| {
        let mut opts = CalibrateOptions::new(Algorithm::ALL[algo], Mode::ALL[mode]);
        opts.config.optimizer = optimizer;
        opts.config.detector = opts.config.detector.with_dispersion_deg(1.5);
        let run = || serde_json::to_vec(&calibrate(&data.samples, room(), &opts, data.ground_truth.as_ref()).unwrap()).unwrap();
        prop_assert_eq!(run(), run());
        Ok(())
    })
}

pub fn io_experiment_leaves_inputs() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("trace.jsonl");
    let data = room_trace(5, CalibrationParams::new(1.0, 1.0), 0.1, 2.0);
    save_dataset(&path, &data).map_err(|e| e.to_string())?;
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let (trace_bytes, truth_bytes) = (read(&path), read(&gazecal::io::truth_path(&path)));
    let vertices = room().vertices().to_vec();
    check((any::<u64>(), 0..3usize), |(seed, kind)| {
        let kind = [ExperimentKind::Accuracy, ExperimentKind::Convergence, ExperimentKind::ParamDependence][kind];
        let mut spec = ExperimentSpec::new(kind, vec![TraceSource::Path(path.to_string_lossy().into())], "builtin:room");
        spec.algos = vec![Algorithm::Ivt];
        spec.distances_m = vec![1.0];
        spec.ranges = vec![1];
        spec.thetas_per_range = 1;
        spec.seed = seed;
        spec.config.optimizer = OptimizerConfig {
            regions: [1, 1],
            population_per_region: 4,
            max_generations: 2,
            seed,
            ..OptimizerConfig::default()
        };
        let before = spec.clone();
        run_experiment(&spec, room()).unwrap();
        prop_assert_eq!(&spec, &before);
        prop_assert_eq!(read(&path), trace_bytes.clone());
        prop_assert_eq!(read(&gazecal::io::truth_path(&path)), truth_bytes.clone());
        prop_assert_eq!(room().vertices(), &vertices[..]);
        Ok(())
    })
}
