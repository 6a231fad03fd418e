//! Scene-camera model, homogeneous gaze directions, and ray queries against
//! the scene mesh.

mod bvh;
mod camera;
pub mod obj;
mod scene;

use thiserror::Error;

pub use camera::{
    inverse_project, project, GazeDirection, HeadPose, WorldPoint, MIN_FORWARD_COMPONENT, ROTATION_TOLERANCE,
};
pub use scene::{Hit, MeshBuilder, Ray, SceneModel, HIT_EPSILON};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("direction does not point into the camera's front half-space")]
    DegenerateDirection,
    #[error("invalid head pose: {0}")]
    InvalidPose(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("scene contains no usable triangles")]
    EmptyScene,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}
