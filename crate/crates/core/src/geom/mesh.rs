//! Zero level-set triangulation on a regular grid.
//!
//! Each grid cube is split into six tetrahedra sharing the main diagonal, so
//! neighboring cubes agree on face diagonals and the result is watertight up
//! to the grid. Triangle orientation points from material (sdf < 0) to
//! outside.

use std::io::Write;

use super::{GeomError, SolidModel, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
}

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        (b - a).cross(c - a).norm() * 0.5
    }

    pub fn normal(&self) -> Vec3 {
        let [a, b, c] = self.vertices;
        let n = (b - a).cross(c - a);
        let len = n.norm();
        if len > 0.0 {
            n * (1.0 / len)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        }
    }
}

/// Triangle soup of the extracted surface.
#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub triangles: Vec<Triangle>,
}

impl TriMesh {
    pub fn area(&self) -> f64 {
        self.triangles.iter().map(Triangle::area).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// ASCII STL.
    pub fn write_stl(&self, w: &mut impl Write, name: &str) -> Result<(), GeomError> {
        writeln!(w, "solid {name}")?;
        for t in &self.triangles {
            let n = t.normal();
            writeln!(w, "  facet normal {} {} {}", n.x, n.y, n.z)?;
            writeln!(w, "    outer loop")?;
            for v in t.vertices {
                writeln!(w, "      vertex {} {} {}", v.x, v.y, v.z)?;
            }
            writeln!(w, "    endloop")?;
            writeln!(w, "  endfacet")?;
        }
        writeln!(w, "endsolid {name}")?;
        Ok(())
    }

    /// Wavefront OBJ (vertices deduplicated per triangle corner order).
    pub fn write_obj(&self, w: &mut impl Write) -> Result<(), GeomError> {
        for t in &self.triangles {
            for v in t.vertices {
                writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
            }
        }
        for i in 0..self.triangles.len() {
            let k = 3 * i + 1;
            writeln!(w, "f {} {} {}", k, k + 1, k + 2)?;
        }
        Ok(())
    }
}

// Corner offsets of a unit cube, bit order (x, y, z).
const CORNERS: [(usize, usize, usize); 8] = [
    (0, 0, 0),
    (1, 0, 0),
    (1, 1, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 0, 1),
    (1, 1, 1),
    (0, 1, 1),
];

// Six tetrahedra around the 0-6 main diagonal.
const TETS: [[usize; 4]; 6] = [
    [0, 5, 1, 6],
    [0, 1, 2, 6],
    [0, 2, 3, 6],
    [0, 3, 7, 6],
    [0, 7, 4, 6],
    [0, 4, 5, 6],
];

fn interp(p0: Vec3, p1: Vec3, d0: f64, d1: f64) -> Vec3 {
    let t = d0 / (d0 - d1);
    p0 + (p1 - p0) * t.clamp(0.0, 1.0)
}

/// Orient so the normal points from the inside sample toward the outside.
fn oriented(a: Vec3, b: Vec3, c: Vec3, out_dir: Vec3) -> Triangle {
    let n = (b - a).cross(c - a);
    if n.dot(out_dir) >= 0.0 {
        Triangle { vertices: [a, b, c] }
    } else {
        Triangle { vertices: [a, c, b] }
    }
}

fn emit_tet(p: [Vec3; 4], d: [f64; 4], out: &mut Vec<Triangle>) {
    let inside: Vec<usize> = (0..4).filter(|&i| d[i] < 0.0).collect();
    match inside.len() {
        0 | 4 => {}
        1 | 3 => {
            // One vertex on its own side: a single triangle on the edges
            // incident to it.
            let lone = if inside.len() == 1 {
                inside[0]
            } else {
                (0..4).find(|i| !inside.contains(i)).unwrap()
            };
            let others: Vec<usize> = (0..4).filter(|&i| i != lone).collect();
            let v: Vec<Vec3> =
                others.iter().map(|&i| interp(p[lone], p[i], d[lone], d[i])).collect();
            let centroid_others =
                (p[others[0]] + p[others[1]] + p[others[2]]) * (1.0 / 3.0);
            let out_dir = if inside.len() == 1 {
                centroid_others - p[lone]
            } else {
                p[lone] - centroid_others
            };
            out.push(oriented(v[0], v[1], v[2], out_dir));
        }
        2 => {
            // Two in, two out: the crossing is a quad split into two
            // triangles.
            let (i0, i1) = (inside[0], inside[1]);
            let outs: Vec<usize> = (0..4).filter(|&i| !inside.contains(&i)).collect();
            let (o0, o1) = (outs[0], outs[1]);
            let a = interp(p[i0], p[o0], d[i0], d[o0]);
            let b = interp(p[i0], p[o1], d[i0], d[o1]);
            let c = interp(p[i1], p[o1], d[i1], d[o1]);
            let e = interp(p[i1], p[o0], d[i1], d[o0]);
            let out_dir = (p[o0] + p[o1]) * 0.5 - (p[i0] + p[i1]) * 0.5;
            out.push(oriented(a, b, c, out_dir));
            out.push(oriented(a, c, e, out_dir));
        }
        _ => unreachable!(),
    }
}

/// Extract the zero level set of the solid over its bounds at the given
/// grid resolution. Empty solids produce an empty mesh.
pub fn extract_mesh(solid: &SolidModel, resolution: usize) -> TriMesh {
    let r = resolution.max(2);
    if solid.bounds.is_empty() {
        return TriMesh::default();
    }
    let min = solid.bounds.min;
    let d = solid.bounds.max - solid.bounds.min;
    let n = r + 1;
    let coord = |i: usize, j: usize, k: usize| -> Vec3 {
        Vec3::new(
            min.x + d.x * (i as f64 / r as f64),
            min.y + d.y * (j as f64 / r as f64),
            min.z + d.z * (k as f64 / r as f64),
        )
    };

    // Sample the grid once.
    let mut field = vec![0.0f64; n * n * n];
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                field[idx(i, j, k)] = solid.sdf(coord(i, j, k));
            }
        }
    }

    let mut triangles = Vec::new();
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let mut pv = [Vec3::ZERO; 8];
                let mut dv = [0.0f64; 8];
                let mut all_pos = true;
                let mut all_neg = true;
                for (c, &(dx, dy, dz)) in CORNERS.iter().enumerate() {
                    let (x, y, z) = (i + dx, j + dy, k + dz);
                    pv[c] = coord(x, y, z);
                    dv[c] = field[idx(x, y, z)];
                    all_pos &= dv[c] >= 0.0;
                    all_neg &= dv[c] < 0.0;
                }
                if all_pos || all_neg {
                    continue;
                }
                for tet in &TETS {
                    emit_tet(
                        [pv[tet[0]], pv[tet[1]], pv[tet[2]], pv[tet[3]]],
                        [dv[tet[0]], dv[tet[1]], dv[tet[2]], dv[tet[3]]],
                        &mut triangles,
                    );
                }
            }
        }
    }
    TriMesh { triangles }
}
