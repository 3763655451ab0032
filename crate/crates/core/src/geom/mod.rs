//! SDF/CSG geometry kernel: executes validated command sequences into solids
//! evaluable as signed distance fields, and derives meshes, point clouds,
//! volumes and validity from them.

mod mesh;
mod plane;
mod profile;
mod sample;
mod solid;

pub use mesh::{extract_mesh, TriMesh, Triangle};
pub use plane::SketchPlane;
pub use profile::{build_profile, profile_sdf, Profile2D, Segment};
pub use sample::{normalize, sample_surface, PointCloud};
pub use solid::{
    execute, is_valid, is_valid_default, volume_estimate, CsgNode, ExtrudeSpec, Extrusion,
    SolidModel, VolumeEstimate,
};

use thiserror::Error;

use crate::lang::LangError;

/// Default grid resolution for validity scans and surface extraction.
pub const DEFAULT_RESOLUTION: usize = 64;
/// Bounds inflation applied around the primitive-union box.
pub const BOUNDS_INFLATION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("open loop at command {position}")]
    OpenLoop { position: usize },
    #[error("zero-length segment at command {position}")]
    ZeroLengthSegment { position: usize },
    #[error("degenerate arc at command {position}")]
    DegenerateArc { position: usize },
    #[error("degenerate circle at command {position}")]
    DegenerateCircle { position: usize },
    #[error("circle loop is not a singleton at command {position}")]
    CircleLoopNotSingleton { position: usize },
    #[error("sketch command outside a loop at command {position}")]
    SketchOutsideLoop { position: usize },
    #[error("empty loop at command {position}")]
    EmptyLoop { position: usize },
    #[error("extrude without profile at command {position}")]
    ExtrudeWithoutProfile { position: usize },
    #[error("first extrude must create a new body (command {position})")]
    FirstExtrudeNotNew { position: usize },
    #[error("trailing loops are never extruded")]
    UnextrudedProfile,
    #[error("program builds no solid")]
    NoExtrusion,
    #[error("degenerate sketch scale at command {position}")]
    DegenerateScale { position: usize },
    #[error("degenerate extrusion extents at command {position}")]
    DegenerateExtrude { position: usize },
    #[error("cannot sample empty solid")]
    EmptySolid,
    #[error("command error: {0}")]
    Command(#[from] LangError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GeomError {
    fn from(e: std::io::Error) -> Self {
        GeomError::Io(e.to_string())
    }
}

/// 2D point/vector in sketch coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// 3D point/vector in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn min_by_component(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_by_component(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 =
        Mat3 { rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };

    pub fn rot_z(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3 { rows: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn rot_y(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3 { rows: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]] }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    /// Multiply by the transpose (the inverse, for rotations).
    pub fn mul_vec_transposed(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[1][0] * v.y + r[2][0] * v.z,
            r[0][1] * v.x + r[1][1] * v.y + r[2][1] * v.z,
            r[0][2] * v.x + r[1][2] * v.y + r[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        Mat3 { rows }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn include(&mut self, p: Vec3) {
        self.min = self.min.min_by_component(p);
        self.max = self.max.max_by_component(p);
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb { min: self.min.min_by_component(o.min), max: self.max.max_by_component(o.max) }
    }

    pub fn inflate(self, frac: f64) -> Aabb {
        let d = (self.max - self.min) * (frac * 0.5);
        Aabb { min: self.min - d, max: self.max + d }
    }

    pub fn center(self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn volume(self) -> f64 {
        let d = self.max - self.min;
        (d.x * d.y * d.z).max(0.0)
    }

    pub fn is_empty(self) -> bool {
        self.min.x > self.max.x
    }
}
