//! Procedural scenes used by tests, examples and the CLI.

use nalgebra::Point3;

use crate::geometry::{MeshBuilder, SceneModel};

/// A furnished 9 m × 9.5 m × 3 m room.
///
/// The floor area within ±2 m of the origin is clear for walking loops.
/// Furniture gives the ray caster depth discontinuities to deal with.
pub fn furnished_room() -> SceneModel {
    let p = Point3::new;
    let mut b = MeshBuilder::new();
    let (x0, x1, y0, y1, z0, z1) = (-4.0, 5.0, 0.0, 3.0, -3.5, 6.0);
    // floor, ceiling, four walls
    b.quad([p(x0, y0, z0), p(x1, y0, z0), p(x1, y0, z1), p(x0, y0, z1)])
        .quad([p(x0, y1, z0), p(x0, y1, z1), p(x1, y1, z1), p(x1, y1, z0)])
        .quad([p(x0, y0, z1), p(x1, y0, z1), p(x1, y1, z1), p(x0, y1, z1)])
        .quad([p(x0, y0, z0), p(x0, y1, z0), p(x1, y1, z0), p(x1, y0, z0)])
        .quad([p(x0, y0, z0), p(x0, y0, z1), p(x0, y1, z1), p(x0, y1, z0)])
        .quad([p(x1, y0, z0), p(x1, y1, z0), p(x1, y1, z1), p(x1, y0, z1)]);
    // bookshelf against the left wall, with shelf boards
    b.cuboid(p(-4.0, 0.0, -1.0), p(-3.6, 2.2, 2.0));
    for k in 1..4 {
        let y = 0.55 * k as f64;
        b.cuboid(p(-3.6, y, -1.0), p(-3.3, y + 0.03, 2.0));
    }
    // desk with a monitor
    b.cuboid(p(2.5, 0.72, 3.0), p(4.0, 0.75, 4.5))
        .cuboid(p(2.5, 0.0, 3.0), p(2.55, 0.72, 3.05))
        .cuboid(p(3.95, 0.0, 4.45), p(4.0, 0.72, 4.5))
        .cuboid(p(3.0, 0.75, 4.2), p(3.6, 1.15, 4.25));
    // cabinet, pillar, box on the floor
    b.cuboid(p(3.8, 0.0, -3.5), p(5.0, 1.8, -2.0))
        .cuboid(p(-3.0, 0.0, 3.0), p(-2.6, 3.0, 3.4))
        .cuboid(p(-1.0, 0.0, 4.0), p(-0.4, 0.5, 4.6));
    // picture frames standing slightly off the walls
    b.cuboid(p(-1.2, 1.3, 5.9), p(0.2, 2.1, 5.95))
        .cuboid(p(4.9, 1.2, 0.0), p(4.95, 1.9, 1.5));
    b.build().expect("fixture mesh is valid")
}

/// A 40 m square plane facing the origin at `distance` meters along +z.
pub fn single_plane(distance: f64) -> SceneModel {
    let p = Point3::new;
    let h = 20.0;
    let mut b = MeshBuilder::new();
    b.quad([p(-h, -h, distance), p(h, -h, distance), p(h, h, distance), p(-h, h, distance)]);
    b.build().expect("fixture mesh is valid")
}
