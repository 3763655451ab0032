//! Sketch-plane placement: orientation angles, origin and in-plane scale.

use super::{GeomError, Mat3, Vec3};
use crate::lang::{CadCommand, CommandType, EPS_DEGENERATE};

/// Where a sketch lives in the world: `world = origin + R * (s*u, s*v, w)`
/// with `R = Rz(phi) * Ry(theta) * Rz(gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchPlane {
    pub origin: Vec3,
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
    pub scale: f64,
    rotation: Mat3,
}

impl SketchPlane {
    pub fn new(origin: Vec3, theta: f64, phi: f64, gamma: f64, scale: f64) -> Result<Self, GeomError> {
        if scale < EPS_DEGENERATE {
            return Err(GeomError::DegenerateScale { position: 0 });
        }
        let rotation = Mat3::rot_z(phi).mul_mat(&Mat3::rot_y(theta)).mul_mat(&Mat3::rot_z(gamma));
        Ok(SketchPlane { origin, theta, phi, gamma, scale, rotation })
    }

    pub fn identity() -> Self {
        Self::new(Vec3::ZERO, 0.0, 0.0, 0.0, 1.0).unwrap()
    }

    pub fn from_command(cmd: &CadCommand, position: usize) -> Result<Self, GeomError> {
        debug_assert_eq!(cmd.ty(), CommandType::Extrude);
        Self::new(
            Vec3::new(cmd.p(8), cmd.p(9), cmd.p(10)),
            cmd.p(5),
            cmd.p(6),
            cmd.p(7),
            cmd.p(11),
        )
        .map_err(|_| GeomError::DegenerateScale { position })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Plane normal in world coordinates.
    pub fn normal(&self) -> Vec3 {
        self.rotation.mul_vec(Vec3::new(0.0, 0.0, 1.0))
    }

    /// Sketch coordinates `(u, v, w)` to world; `u, v` are profile units
    /// (scaled by `s`), `w` is world units along the normal.
    pub fn to_world(&self, u: f64, v: f64, w: f64) -> Vec3 {
        self.origin + self.rotation.mul_vec(Vec3::new(self.scale * u, self.scale * v, w))
    }

    /// Inverse of [`Self::to_world`].
    pub fn to_sketch(&self, p: Vec3) -> (f64, f64, f64) {
        let l = self.rotation.mul_vec_transposed(p - self.origin);
        (l.x / self.scale, l.y / self.scale, l.z)
    }
}
