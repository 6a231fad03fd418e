//! Self-calibration of a head-mounted eye tracker's visual-axis offset.
//!
//! Fixations are detected in gaze traces recorded while the user moves
//! through a known 3D scene. Under the correct offset, every gaze ray of a
//! fixation lands on the same surface point, so the offset is recovered by
//! minimizing the spread of the points of regard reprojected onto a
//! reference camera of each fixation.
//!
//! Modules:
//!
//! - [`geometry`]: scene camera, ray casting against a triangle mesh.
//! - [`eye`]: the two-angle offset model.
//! - [`fixation`]: I-VT, 3D I-DT and 3D I-VDT detectors.
//! - [`calib`]: reprojection cost and region-partitioned differential evolution.
//! - [`synth`]: ground-truth trace simulator and fixture scenes.
//! - [`baseline`]: marker-based regression calibration.
//! - [`io`]: trace, ground-truth and configuration files.
//! - [`pipeline`]: one-trace self-calibration.
//! - [`experiment`]: batch experiments over synthetic traces.

pub mod baseline;
pub mod calib;
pub mod experiment;
pub mod eye;
pub mod fixation;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod synth;

/// Any failure surfaced by the pipeline or the experiment drivers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Eye(#[from] eye::EyeModelError),
    #[error(transparent)]
    Detect(#[from] fixation::DetectError),
    #[error(transparent)]
    Calib(#[from] calib::CalibError),
    #[error(transparent)]
    Sim(#[from] synth::SimError),
    #[error(transparent)]
    Baseline(#[from] baseline::BaselineError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("{0}")]
    Invalid(String),
}
