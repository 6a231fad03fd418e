use nalgebra::{Isometry3, Point3, Unit, Vector3};

use super::bvh::{Aabb, Bvh};
use super::{GeometryError, WorldPoint};

/// Hits closer than this (in meters along the ray) are rejected.
pub const HIT_EPSILON: f64 = 1e-9;

/// Twice the area below which a triangle is dropped at load time.
const DEGENERATE_AREA: f64 = 1e-18;

/// World-frame ray with a unit direction, so hit parameters are distances in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction: Unit::new_normalize(direction),
        }
    }

    pub fn at(&self, distance: f64) -> Point3<f64> {
        self.origin + self.direction.as_ref() * distance
    }
}

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: WorldPoint,
    pub distance: f64,
    pub triangle: usize,
}

/// Immutable triangle mesh with a bounding-volume hierarchy for ray queries.
#[derive(Debug, Clone)]
pub struct SceneModel {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    corners: Vec<[Point3<f64>; 3]>,
    bvh: Bvh,
}

impl SceneModel {
    /// Builds the scene, rejecting out-of-range indices and silently dropping
    /// zero-area triangles.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh(format!("non-finite vertex {v:?}")));
        }
        let mut kept = Vec::with_capacity(triangles.len());
        for (i, tri) in triangles.into_iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&idx| idx >= vertices.len()) {
                return Err(GeometryError::InvalidMesh(format!(
                    "triangle {i} references vertex {bad}, but only {} vertices exist",
                    vertices.len()
                )));
            }
            let [a, b, c] = tri.map(|idx| vertices[idx]);
            if (b - a).cross(&(c - a)).norm() > DEGENERATE_AREA {
                kept.push(tri);
            }
        }
        if kept.is_empty() {
            return Err(GeometryError::EmptyScene);
        }
        let boxes: Vec<Aabb> = kept
            .iter()
            .map(|t| Aabb::from_points(t.iter().map(|&i| &vertices[i])))
            .collect();
        let bvh = Bvh::build(&boxes);
        let corners = kept.iter().map(|t| t.map(|i| vertices[i])).collect();
        Ok(Self {
            vertices,
            triangles: kept,
            corners,
            bvh,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let root = self.bvh.root_bounds();
        (root.min, root.max)
    }

    fn corners(&self, triangle: usize) -> &[Point3<f64>; 3] {
        &self.corners[triangle]
    }

    /// Nearest hit using the hierarchy.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        self.intersect_with_hint(ray, None)
    }

    /// Nearest hit, testing `hint` first. A good hint (usually the triangle
    /// this ray's neighbor hit) shrinks the search; the result does not
    /// depend on it except for which of several triangles tied at the same
    /// distance is reported.
    pub fn intersect_with_hint(&self, ray: &Ray, hint: Option<usize>) -> Option<Hit> {
        let prepared = PreparedRay::new(ray);
        let mut best: Option<(f64, usize)> = None;
        if let Some(tri) = hint.filter(|&t| t < self.corners.len()) {
            let [a, b, c] = self.corners(tri);
            best = prepared.intersect(a, b, c).map(|t| (t, tri));
        }
        // widened so the hinted triangle's neighbors at the same distance stay reachable
        let limit = best.map_or(f64::INFINITY, |(t, _)| t + t * 1e-12);
        self.bvh.traverse(ray, limit, |tri, limit| {
            let [a, b, c] = self.corners(tri);
            match prepared.intersect(a, b, c) {
                Some(t) if t < limit && best.map_or(true, |(bt, _)| t < bt) => {
                    best = Some((t, tri));
                    Some(t)
                }
                _ => None,
            }
        });
        best.map(|(distance, triangle)| Hit {
            point: ray.at(distance),
            distance,
            triangle,
        })
    }

    /// Nearest hit by testing every triangle. Reference path for the hierarchy.
    pub fn intersect_exhaustive(&self, ray: &Ray) -> Option<Hit> {
        let prepared = PreparedRay::new(ray);
        let mut best: Option<(f64, usize)> = None;
        for tri in 0..self.triangles.len() {
            let [a, b, c] = self.corners(tri);
            if let Some(t) = prepared.intersect(a, b, c) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, tri));
                }
            }
        }
        best.map(|(distance, triangle)| Hit {
            point: ray.at(distance),
            distance,
            triangle,
        })
    }

    /// Copy of the scene with every vertex moved by a rigid transform.
    pub fn transformed(&self, transform: &Isometry3<f64>) -> Self {
        let vertices = self.vertices.iter().map(|v| transform * v).collect();
        Self::new(vertices, self.triangles.clone()).expect("rigid transform preserves validity")
    }
}

/// Ray pre-sheared for the watertight triangle test.
struct PreparedRay {
    origin: Point3<f64>,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl PreparedRay {
    fn new(ray: &Ray) -> Self {
        let d = ray.direction.as_ref();
        let kz = d.iamax();
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if d[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Self {
            origin: ray.origin,
            kx,
            ky,
            kz,
            sx: d[kx] / d[kz],
            sy: d[ky] / d[kz],
            sz: 1.0 / d[kz],
        }
    }

    /// Distance to the triangle, accepting both faces and hits on shared edges.
    fn intersect(&self, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<f64> {
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let a = a - self.origin;
        let b = b - self.origin;
        let c = c - self.origin;
        let ax = a[kx] - self.sx * a[kz];
        let ay = a[ky] - self.sy * a[kz];
        let bx = b[kx] - self.sx * b[kz];
        let by = b[ky] - self.sy * b[kz];
        let cx = c[kx] - self.sx * c[kz];
        let cy = c[ky] - self.sy * c[kz];

        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let t = (u * self.sz * a[kz] + v * self.sz * b[kz] + w * self.sz * c[kz]) / det;
        (t > HIT_EPSILON && t.is_finite()).then_some(t)
    }
}

/// Incremental mesh construction for procedurally built scenes.
#[derive(Debug, Default, Clone)]
pub struct MeshBuilder {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
}

impl MeshBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex(&mut self, p: Point3<f64>) -> usize {
        self.vertices.push(p);
        self.vertices.len() - 1
    }

    pub fn triangle(&mut self, a: usize, b: usize, c: usize) -> &mut Self {
        self.triangles.push([a, b, c]);
        self
    }

    /// Quad `a b c d` in winding order, split along `a–c`.
    pub fn quad(&mut self, corners: [Point3<f64>; 4]) -> &mut Self {
        let [a, b, c, d] = corners.map(|p| self.vertex(p));
        self.triangle(a, b, c).triangle(a, c, d)
    }

    /// Axis-aligned box spanning `min..max`.
    pub fn cuboid(&mut self, min: Point3<f64>, max: Point3<f64>) -> &mut Self {
        let p = |x: f64, y: f64, z: f64| Point3::new(x, y, z);
        let (x0, y0, z0, x1, y1, z1) = (min.x, min.y, min.z, max.x, max.y, max.z);
        self.quad([p(x0, y0, z0), p(x1, y0, z0), p(x1, y1, z0), p(x0, y1, z0)])
            .quad([p(x0, y0, z1), p(x0, y1, z1), p(x1, y1, z1), p(x1, y0, z1)])
            .quad([p(x0, y0, z0), p(x0, y1, z0), p(x0, y1, z1), p(x0, y0, z1)])
            .quad([p(x1, y0, z0), p(x1, y0, z1), p(x1, y1, z1), p(x1, y1, z0)])
            .quad([p(x0, y0, z0), p(x0, y0, z1), p(x1, y0, z1), p(x1, y0, z0)])
            .quad([p(x0, y1, z0), p(x1, y1, z0), p(x1, y1, z1), p(x0, y1, z1)])
    }

    pub fn build(self) -> Result<SceneModel, GeometryError> {
        SceneModel::new(self.vertices, self.triangles)
    }
}
