use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::scene::{Ray, SceneModel};
use super::GeometryError;

/// A world-space point in meters.
pub type WorldPoint = Point3<f64>;

/// Smallest third homogeneous component accepted when normalizing a direction.
pub const MIN_FORWARD_COMPONENT: f64 = 1e-12;

/// Orthonormality tolerance on the entries of `RᵀR − I`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Gaze direction on the focal-length-1 image plane, homogeneous form `[u, v, 1]`.
///
/// The scene camera looks along +z with +x to the right and +y down, so a
/// positive `u` is a gaze to the right of the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeDirection {
    pub u: f64,
    pub v: f64,
}

impl GazeDirection {
    /// Straight ahead along the camera axis.
    pub const FORWARD: GazeDirection = GazeDirection { u: 0.0, v: 0.0 };

    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Normalizes an arbitrary camera-frame vector to homogeneous form.
    ///
    /// Fails when the vector does not point into the front half-space.
    pub fn from_vector(vector: &Vector3<f64>) -> Result<Self, GeometryError> {
        if !(vector.z > MIN_FORWARD_COMPONENT) || !vector.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::DegenerateDirection);
        }
        Ok(Self {
            u: vector.x / vector.z,
            v: vector.y / vector.z,
        })
    }

    /// `[u, v, 1]`.
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    pub fn unit(&self) -> Unit<Vector3<f64>> {
        Unit::new_normalize(self.homogeneous())
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance_squared(&self, other: &GazeDirection) -> f64 {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }
}

/// Scene-camera pose: rotation from camera to world coordinates and camera
/// origin in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl HeadPose {
    /// Validates that `rotation` is a proper rotation within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let worst = gram.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
        if worst > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {worst:e})"
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidPose("rotation has negative determinant".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, with image-up as close to `up` as possible.
    pub fn look_at(eye: &WorldPoint, target: &WorldPoint, up: &Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = target - eye;
        Self::looking_along(eye, &forward, up)
    }

    /// Camera at `eye` whose optical axis points along `forward`.
    pub fn looking_along(eye: &WorldPoint, forward: &Vector3<f64>, up: &Vector3<f64>) -> Result<Self, GeometryError> {
        let z = forward
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPose("zero forward vector".into()))?;
        let x = z
            .cross(up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPose("forward parallel to up".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Ok(Self {
            rotation,
            translation: eye.coords,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn position(&self) -> WorldPoint {
        Point3::from(self.translation)
    }

    /// World point expressed in camera coordinates.
    pub fn to_camera(&self, point: &WorldPoint) -> Vector3<f64> {
        self.rotation.tr_mul(&(point.coords - self.translation))
    }

    /// Camera-frame vector rotated into the world frame.
    pub fn to_world_direction(&self, direction: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * direction
    }

    /// World-frame ray from the camera origin through `gaze`.
    pub fn gaze_ray(&self, gaze: &GazeDirection) -> Ray {
        Ray::new(self.position(), self.to_world_direction(&gaze.homogeneous()))
    }

    /// Applies a rigid world transform to the camera.
    pub fn transformed(&self, transform: &Isometry3<f64>) -> Self {
        let r = transform.rotation.to_rotation_matrix().into_inner();
        Self {
            rotation: r * self.rotation,
            translation: r * self.translation + transform.translation.vector,
        }
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
        ]
    }
}

/// Projection onto the scene-camera image plane.
///
/// Fails with [`GeometryError::PointBehindCamera`] when the point has
/// non-positive depth in the camera frame.
pub fn project(camera: &HeadPose, point: &WorldPoint) -> Result<GazeDirection, GeometryError> {
    let p = camera.to_camera(point);
    if !(p.z > 0.0) {
        return Err(GeometryError::PointBehindCamera { depth: p.z });
    }
    Ok(GazeDirection {
        u: p.x / p.z,
        v: p.y / p.z,
    })
}

/// Point of regard: nearest scene intersection of the gaze ray, or `None` on a miss.
pub fn inverse_project(camera: &HeadPose, gaze: &GazeDirection, scene: &SceneModel) -> Option<WorldPoint> {
    scene.intersect(&camera.gaze_ray(gaze)).map(|hit| hit.point)
}
