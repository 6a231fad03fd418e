//! File formats: JSONL gaze traces with a ground-truth sidecar, TOML run
//! configuration, JSON scripts and marker sessions, and scene loading.
//!
//! A trace holds one sample per line:
//!
//! ```text
//! {"t":0.02,"g":[0.01,-0.03],"R":[1,0,0,0,1,0,0,0,1],"p":[0,1.6,0],"open":1}
//! ```
//!
//! `R` is the camera-to-world rotation, row-major; `p` the camera position.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::MarkerSession;
use crate::calib::OptimizerConfig;
use crate::eye::CalibrationParams;
use crate::fixation::{DetectorConfig, GazeSample};
use crate::geometry::obj::load_obj;
use crate::geometry::{GazeDirection, GeometryError, HeadPose, SceneModel};
use crate::synth::{furnished_room, single_plane, GroundTruth, SimScript, TraceDataset, TraceRecipe};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace file contains no samples")]
    TraceEmpty,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("scene {path}: {source}")]
    Scene {
        path: String,
        #[source]
        source: GeometryError,
    },
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceRecord {
    t: f64,
    g: [f64; 2],
    #[serde(rename = "R")]
    r: [f64; 9],
    p: [f64; 3],
    open: f64,
}

impl TraceRecord {
    fn from_sample(s: &GazeSample) -> Self {
        let p = s.pose.translation();
        Self {
            t: s.timestamp,
            g: [s.gaze.u, s.gaze.v],
            r: s.pose.rotation_row_major(),
            p: [p.x, p.y, p.z],
            open: s.openness,
        }
    }

    fn into_sample(self) -> Result<GazeSample, String> {
        let pose = HeadPose::new(Matrix3::from_row_slice(&self.r), Vector3::from(self.p)).map_err(|e| e.to_string())?;
        let gaze = GazeDirection::new(self.g[0], self.g[1]);
        if !gaze.is_finite() || !self.t.is_finite() || !self.open.is_finite() {
            return Err("non-finite value".into());
        }
        Ok(GazeSample {
            timestamp: self.t,
            gaze,
            pose,
            openness: self.open,
        })
    }
}

/// Writes one JSON object per sample. Floats use the shortest round-trip
/// representation, so reading back is bit-exact.
pub fn write_trace<W: Write>(samples: &[GazeSample], mut out: W) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, &TraceRecord::from_sample(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses a trace, skipping blank lines.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<GazeSample>, IoError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IoError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| IoError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        samples.push(record.into_sample().map_err(|message| IoError::Line { line: line_no, message })?);
    }
    if samples.is_empty() {
        return Err(IoError::TraceEmpty);
    }
    Ok(samples)
}

pub fn save_trace(path: &Path, samples: &[GazeSample]) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_error(path))?;
    write_trace(samples, BufWriter::new(file)).map_err(file_error(path))
}

pub fn load_trace(path: &Path) -> Result<Vec<GazeSample>, IoError> {
    let file = File::open(path).map_err(file_error(path))?;
    read_trace(BufReader::new(file)).map_err(|e| match e {
        IoError::Line { line, message } => IoError::Format {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        },
        other => other,
    })
}

/// `run.jsonl` → `run.truth.json`.
pub fn truth_path(trace: &Path) -> PathBuf {
    trace.with_extension("truth.json")
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene: Option<String>,
    #[serde(flatten)]
    truth: GroundTruth,
}

/// Writes the trace and, when present, its ground-truth sidecar.
pub fn save_dataset(path: &Path, data: &TraceDataset) -> Result<(), IoError> {
    save_trace(path, &data.samples)?;
    if let Some(truth) = &data.ground_truth {
        let file = TruthFile {
            scene: data.scene_path.clone(),
            truth: truth.clone(),
        };
        save_json(&truth_path(path), &file)?;
    }
    Ok(())
}

/// Reads a trace and its sidecar if one exists next to it.
pub fn load_dataset(path: &Path) -> Result<TraceDataset, IoError> {
    let samples = load_trace(path)?;
    let sidecar = truth_path(path);
    let (ground_truth, scene_path) = if sidecar.exists() {
        let file: TruthFile = load_json(&sidecar)?;
        (Some(file.truth), file.scene)
    } else {
        (None, None)
    };
    Ok(TraceDataset {
        samples,
        ground_truth,
        scene_path,
    })
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_error(path))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(file_error(path))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(file_error(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_script(path: &Path) -> Result<SimScript, IoError> {
    load_json(path)
}

pub fn load_recipe(path: &Path) -> Result<TraceRecipe, IoError> {
    load_json(path)
}

pub fn load_session(path: &Path) -> Result<MarkerSession, IoError> {
    load_json(path)
}

/// Detector, optimizer and prior settings read from a TOML file:
///
/// ```toml
/// [detector]
/// velocity_threshold_deg_per_s = 80.0
/// dispersion_threshold = 1.4926e-4
///
/// [optimizer]
/// regions = [4, 4]
/// seed = 7
///
/// [prior]
/// alpha = 1.02
/// beta = 3.30
/// ```
///
/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub detector: DetectorConfig,
    pub optimizer: OptimizerConfig,
    /// Offset assumed when converting visual-axis traces to optical-like gaze.
    pub prior: CalibrationParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            optimizer: OptimizerConfig::default(),
            prior: CalibrationParams::AVERAGE_OFFSET,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(file_error(path))?;
        Self::parse(&text).map_err(|message| IoError::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Fails for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String, String> {
        toml::to_string(self).map_err(|e| e.to_string())
    }
}

/// Loads an OBJ mesh, or a built-in fixture: `builtin:room`, or
/// `builtin:plane` / `builtin:plane:<distance>`.
pub fn load_scene(spec: &str) -> Result<SceneModel, IoError> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return match name.split_once(':').unwrap_or((name, "")) {
            ("room", "") => Ok(furnished_room()),
            ("plane", "") => Ok(single_plane(2.0)),
            ("plane", d) => d
                .parse::<f64>()
                .ok()
                .filter(|d| *d > 0.0 && d.is_finite())
                .map(single_plane)
                .ok_or_else(|| IoError::Scene {
                    path: spec.into(),
                    source: GeometryError::InvalidMesh(format!("bad plane distance '{d}'")),
                }),
            _ => Err(IoError::Scene {
                path: spec.into(),
                source: GeometryError::InvalidMesh("unknown built-in scene".into()),
            }),
        };
    }
    load_obj(spec).map_err(|source| IoError::Scene {
        path: spec.into(),
        source,
    })
}
