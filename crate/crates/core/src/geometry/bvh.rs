//! Axis-aligned bounding-volume hierarchy over triangle bounds, built with a
//! binned surface-area heuristic.

use nalgebra::{Point3, Vector3};

use super::scene::{Ray, HIT_EPSILON};

const MAX_LEAF_SIZE: usize = 4;
const BINS: usize = 16;
const STACK_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Point3::from([f64::INFINITY; 3]),
            max: Point3::from([f64::NEG_INFINITY; 3]),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    fn centroid(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    fn half_area(&self) -> f64 {
        let e = self.max - self.min;
        if e.iter().any(|c| *c < 0.0) {
            return 0.0;
        }
        e.x * e.y + e.y * e.z + e.z * e.x
    }

    /// Grown so rays grazing a flat box still enter it.
    fn padded(&self) -> Aabb {
        let pad = |lo: f64, hi: f64| 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        let p = Vector3::from_fn(|i, _| pad(self.min[i], self.max[i]));
        Aabb {
            min: self.min - p,
            max: self.max + p,
        }
    }
}

/// Per-ray constants for the slab test.
struct SlabRay {
    origin: Point3<f64>,
    inv_dir: Vector3<f64>,
    parallel: [bool; 3],
}

impl SlabRay {
    fn new(ray: &Ray) -> Self {
        let d = ray.direction.as_ref();
        Self {
            origin: ray.origin,
            inv_dir: d.map(|c| 1.0 / c),
            parallel: [d.x == 0.0, d.y == 0.0, d.z == 0.0],
        }
    }

    /// Entry distance when the (pre-padded) box overlaps `[HIT_EPSILON, limit)`.
    #[inline]
    fn entry(&self, b: &Aabb, limit: f64) -> Option<f64> {
        let mut t0 = HIT_EPSILON;
        let mut t1 = limit;
        for axis in 0..3 {
            let o = self.origin[axis];
            if self.parallel[axis] {
                if o < b.min[axis] || o > b.max[axis] {
                    return None;
                }
                continue;
            }
            let a = (b.min[axis] - o) * self.inv_dir[axis];
            let c = (b.max[axis] - o) * self.inv_dir[axis];
            t0 = t0.max(a.min(c));
            t1 = t1.min(a.max(c));
        }
        (t0 <= t1).then_some(t0)
    }
}

/// Flat node: a leaf when `count > 0`, else an inner node whose left child
/// directly follows it and whose right child sits at `index`.
#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    index: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    /// Primitive indices, permuted so every leaf owns a contiguous run.
    order: Vec<usize>,
    root: Aabb,
}

impl Bvh {
    pub fn build(boxes: &[Aabb]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * boxes.len()),
            order: (0..boxes.len()).collect(),
            root: boxes.iter().fold(Aabb::empty(), |acc, b| acc.union(b)),
        };
        let centroids: Vec<Point3<f64>> = boxes.iter().map(Aabb::centroid).collect();
        bvh.build_node(boxes, &centroids, 0, boxes.len(), 0);
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centroids: &[Point3<f64>], first: usize, end: usize, depth: usize) {
        let bounds = self.order[first..end]
            .iter()
            .fold(Aabb::empty(), |acc, &i| acc.union(&boxes[i]));
        let index = self.nodes.len();
        let count = end - first;
        self.nodes.push(Node {
            bounds: bounds.padded(),
            index: first as u32,
            count: count as u32,
        });
        if count <= MAX_LEAF_SIZE || depth + 2 >= STACK_DEPTH {
            return;
        }
        let Some(mid) = self.partition(boxes, centroids, first, end, &bounds) else {
            return;
        };
        self.build_node(boxes, centroids, first, mid, depth + 1);
        let right = self.nodes.len() as u32;
        self.build_node(boxes, centroids, mid, end, depth + 1);
        self.nodes[index].index = right;
        self.nodes[index].count = 0;
    }

    /// Reorders `first..end` around the cheapest binned split and returns the
    /// split point, or `None` when a leaf is cheaper.
    fn partition(&mut self, boxes: &[Aabb], centroids: &[Point3<f64>], first: usize, end: usize, bounds: &Aabb) -> Option<usize> {
        let count = end - first;
        let spread = Aabb::from_points(self.order[first..end].iter().map(|&i| &centroids[i]));
        let mut best: Option<(f64, usize, f64)> = None;
        for axis in 0..3 {
            let (lo, hi) = (spread.min[axis], spread.max[axis]);
            if !(hi > lo) {
                continue;
            }
            let scale = BINS as f64 / (hi - lo);
            let bin_of = |c: f64| (((c - lo) * scale) as usize).min(BINS - 1);
            let mut bin_box = [Aabb::empty(); BINS];
            let mut bin_count = [0usize; BINS];
            for &i in &self.order[first..end] {
                let b = bin_of(centroids[i][axis]);
                bin_box[b] = bin_box[b].union(&boxes[i]);
                bin_count[b] += 1;
            }
            let mut right_area = [0.0; BINS];
            let mut acc = Aabb::empty();
            let mut n = 0;
            let mut right_count = [0usize; BINS];
            for b in (1..BINS).rev() {
                acc = acc.union(&bin_box[b]);
                n += bin_count[b];
                right_area[b] = acc.half_area();
                right_count[b] = n;
            }
            let mut acc = Aabb::empty();
            let mut n = 0;
            for split in 1..BINS {
                acc = acc.union(&bin_box[split - 1]);
                n += bin_count[split - 1];
                if n == 0 || right_count[split] == 0 {
                    continue;
                }
                let cost = acc.half_area() * n as f64 + right_area[split] * right_count[split] as f64;
                if best.map_or(true, |(c, _, _)| cost < c) {
                    best = Some((cost, axis, lo + split as f64 / scale));
                }
            }
        }
        let (cost, axis, plane) = best?;
        if cost >= bounds.half_area() * count as f64 && count <= MAX_LEAF_SIZE * 2 {
            return None;
        }
        let slice = &mut self.order[first..end];
        let mut left = 0;
        for i in 0..slice.len() {
            if centroids[slice[i]][axis] < plane {
                slice.swap(i, left);
                left += 1;
            }
        }
        (left > 0 && left < count).then_some(first + left)
    }

    pub fn root_bounds(&self) -> Aabb {
        self.root
    }

    /// Visits candidate primitives front to back. `test` receives a primitive
    /// index and the current nearest distance, and returns a new nearest
    /// distance when it finds a closer hit.
    pub fn traverse(&self, ray: &Ray, limit: f64, mut test: impl FnMut(usize, f64) -> Option<f64>) {
        let slab = SlabRay::new(ray);
        let mut limit = limit;
        let mut stack = [0u32; STACK_DEPTH];
        let mut top = 0;
        let mut node = 0usize;
        if slab.entry(&self.nodes[0].bounds, limit).is_none() {
            return;
        }
        loop {
            let n = &self.nodes[node];
            if n.count > 0 {
                let first = n.index as usize;
                for &prim in &self.order[first..first + n.count as usize] {
                    if let Some(t) = test(prim, limit) {
                        limit = t;
                    }
                }
            } else {
                let (left, right) = (node + 1, n.index as usize);
                let l = slab.entry(&self.nodes[left].bounds, limit);
                let r = slab.entry(&self.nodes[right].bounds, limit);
                match (l, r) {
                    (Some(tl), Some(tr)) => {
                        let (near, far) = if tl <= tr { (left, right) } else { (right, left) };
                        stack[top] = far as u32;
                        top += 1;
                        node = near;
                        continue;
                    }
                    (Some(_), None) => {
                        node = left;
                        continue;
                    }
                    (None, Some(_)) => {
                        node = right;
                        continue;
                    }
                    (None, None) => {}
                }
            }
            // pop, skipping nodes the shrunken limit has ruled out
            loop {
                if top == 0 {
                    return;
                }
                top -= 1;
                node = stack[top] as usize;
                if slab.entry(&self.nodes[node].bounds, limit).is_some() {
                    break;
                }
            }
        }
    }
}
