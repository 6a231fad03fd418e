//! Minimal Wavefront OBJ support: `v` and `f` records only.
//!
//! Face vertices may carry `/vt/vn` suffixes, which are ignored. Negative
//! indices count back from the most recent vertex. Polygons with more than
//! three vertices are fan-triangulated.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{GeometryError, SceneModel};

pub fn parse_obj<R: BufRead>(reader: R) -> Result<SceneModel, GeometryError> {
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| GeometryError::Io(e.to_string()))?;
        let bad = |message: String| GeometryError::Parse { line: line_no, message };
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| bad(format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(bad("vertex needs three coordinates".into()));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut corners = Vec::with_capacity(4);
                for token in tokens {
                    let head = token.split('/').next().unwrap_or_default();
                    let raw: i64 = head.parse().map_err(|e| bad(format!("bad face index {token:?}: {e}")))?;
                    let index = match raw {
                        0 => return Err(bad("face index 0 is invalid (indices are 1-based)".into())),
                        r if r > 0 => (r - 1) as usize,
                        r => {
                            let back = r.unsigned_abs() as usize;
                            if back > vertices.len() {
                                return Err(bad(format!("relative index {r} precedes the first vertex")));
                            }
                            vertices.len() - back
                        }
                    };
                    corners.push(index);
                }
                if corners.len() < 3 {
                    return Err(bad("face needs at least three vertices".into()));
                }
                for i in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
            _ => {}
        }
    }
    SceneModel::new(vertices, triangles)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<SceneModel, GeometryError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_obj(std::io::BufReader::new(file))
}

pub fn write_obj<W: Write>(scene: &SceneModel, mut out: W) -> std::io::Result<()> {
    for v in scene.vertices() {
        writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for [a, b, c] in scene.triangles() {
        writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1)?;
    }
    Ok(())
}
