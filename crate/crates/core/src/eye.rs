//! Two-angle eye model relating the measured (optical-like) axis to the
//! visual axis.
//!
//! The calibration transform rotates a gaze direction about the camera's
//! vertical axis by `alpha`, then about its horizontal axis by `beta`:
//!
//! ```text
//!        | 1    0      0   | |  cos α  0  sin α |
//! f(g) = | 0  cos β  sin β | |    0    1    0   | g
//!        | 0 −sin β  cos β | | −sin α  0  cos α |
//! ```
//!
//! and re-normalizes the result to homogeneous form. Angles are degrees at
//! every public boundary.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GazeDirection, MIN_FORWARD_COMPONENT};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EyeModelError {
    #[error("rotated gaze leaves the camera's front half-space")]
    DegenerateDirection,
    #[error("zero-length direction vector")]
    ZeroVector,
}

/// Horizontal (`alpha`) and vertical (`beta`) offset angles, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub alpha: f64,
    pub beta: f64,
}

impl CalibrationParams {
    pub const ZERO: CalibrationParams = CalibrationParams { alpha: 0.0, beta: 0.0 };

    /// Population-average cyclopean offset used as the optical-axis prior.
    pub const AVERAGE_OFFSET: CalibrationParams = CalibrationParams { alpha: 1.02, beta: 3.30 };

    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.alpha, self.beta]
    }

    /// Largest per-component absolute difference, degrees.
    pub fn max_component_error(&self, other: &CalibrationParams) -> f64 {
        (self.alpha - other.alpha).abs().max((self.beta - other.beta).abs())
    }

    /// The rotation `Rx(β)·Ry(α)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sa, ca) = self.alpha.to_radians().sin_cos();
        let (sb, cb) = self.beta.to_radians().sin_cos();
        #[rustfmt::skip]
        let rx = Matrix3::new(
            1.0, 0.0, 0.0,
            0.0,  cb,  sb,
            0.0, -sb,  cb,
        );
        #[rustfmt::skip]
        let ry = Matrix3::new(
             ca, 0.0,  sa,
            0.0, 1.0, 0.0,
            -sa, 0.0,  ca,
        );
        rx * ry
    }
}

fn rotate(gaze: &GazeDirection, rotation: &Matrix3<f64>) -> Result<GazeDirection, EyeModelError> {
    let r = rotation * gaze.homogeneous();
    if !(r.z > MIN_FORWARD_COMPONENT) {
        return Err(EyeModelError::DegenerateDirection);
    }
    Ok(GazeDirection::new(r.x / r.z, r.y / r.z))
}

/// Maps an optical-axis direction to the calibrated direction under `theta`.
pub fn apply_offset(g_opt: &GazeDirection, theta: &CalibrationParams) -> Result<GazeDirection, EyeModelError> {
    rotate(g_opt, &theta.rotation())
}

/// Exact inverse of [`apply_offset`].
pub fn remove_offset(g_vis: &GazeDirection, theta: &CalibrationParams) -> Result<GazeDirection, EyeModelError> {
    rotate(g_vis, &theta.rotation().transpose())
}

/// Angle between two vectors in degrees, in `[0, 180]`.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64, EyeModelError> {
    if a.norm_squared() == 0.0 || b.norm_squared() == 0.0 {
        return Err(EyeModelError::ZeroVector);
    }
    // atan2 form keeps precision near 0° and 180°
    Ok(a.cross(b).norm().atan2(a.dot(b)).to_degrees())
}

/// Angle between two gaze directions in degrees.
pub fn angular_error(a: &GazeDirection, b: &GazeDirection) -> f64 {
    angle_between(&a.homogeneous(), &b.homogeneous()).expect("homogeneous directions are never zero")
}
