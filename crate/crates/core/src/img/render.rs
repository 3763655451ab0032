//! Orthographic isometric rendering by sphere tracing the solid's SDF.

use super::{GrayImage, ImgError};
use crate::geom::{SolidModel, Vec3};

/// Default render resolution.
pub const RENDER_SIZE: usize = 448;

const MAX_STEPS: usize = 128;
// Fixed oblique light so flat faces with different normals shade apart
// (a head-on light would give every face of a cube the same value).
const LIGHT: Vec3 = Vec3::new(0.267261241912424, 0.534522483824849, 0.801783725737273);
const AMBIENT: f64 = 0.15;

/// Render the solid along the body diagonal -(1,1,1)/sqrt(3) with up
/// resolved against +z, Lambertian shading and black background. Pixels are
/// a pure function of (solid, size).
pub fn render_isometric(solid: &SolidModel, size: usize) -> Result<GrayImage, ImgError> {
    let dir = Vec3::new(-1.0, -1.0, -1.0).normalized();
    // Gram-Schmidt +z against the view direction.
    let up = {
        let z = Vec3::new(0.0, 0.0, 1.0);
        (z - dir * z.dot(dir)).normalized()
    };
    let right = dir.cross(up); // unit: dir and up orthonormal

    let center = solid.bounds.center();
    let radius = 0.5 * solid.bounds.diagonal();
    if !radius.is_finite() || radius <= 0.0 {
        return Err(ImgError::EmptySolid);
    }
    let half_view = radius * 1.05;
    let eps = 1e-3 * (2.0 * radius);
    let t_max = 4.0 * radius;

    let mut img = GrayImage::new(size, size);
    let mut any_hit = false;
    for py in 0..size {
        for px in 0..size {
            // Pixel center in [-half_view, half_view]^2, y up.
            let sx = ((px as f64 + 0.5) / size as f64 * 2.0 - 1.0) * half_view;
            let sy = (1.0 - (py as f64 + 0.5) / size as f64 * 2.0) * half_view;
            let origin = center + right * sx + up * sy - dir * (2.0 * radius);
            let mut t = 0.0f64;
            let mut hit = None;
            for _ in 0..MAX_STEPS {
                let p = origin + dir * t;
                let d = solid.sdf(p);
                if d < eps {
                    hit = Some(p);
                    break;
                }
                t += d.max(eps * 0.25);
                if t > t_max {
                    break;
                }
            }
            if let Some(p) = hit {
                any_hit = true;
                let n = sdf_normal(solid, p, eps * 0.5);
                let lambert = n.dot(LIGHT).max(0.0);
                let shade = AMBIENT + (1.0 - AMBIENT) * lambert;
                img.set(px, py, (shade * 255.0).round().clamp(1.0, 255.0) as u8);
            }
        }
    }
    if !any_hit {
        return Err(ImgError::EmptySolid);
    }
    Ok(img)
}

fn sdf_normal(solid: &SolidModel, p: Vec3, h: f64) -> Vec3 {
    let dx = solid.sdf(Vec3::new(p.x + h, p.y, p.z)) - solid.sdf(Vec3::new(p.x - h, p.y, p.z));
    let dy = solid.sdf(Vec3::new(p.x, p.y + h, p.z)) - solid.sdf(Vec3::new(p.x, p.y - h, p.z));
    let dz = solid.sdf(Vec3::new(p.x, p.y, p.z + h)) - solid.sdf(Vec3::new(p.x, p.y, p.z - h));
    let g = Vec3::new(dx, dy, dz);
    let n = g.norm();
    if n > 0.0 {
        g * (1.0 / n)
    } else {
        -Vec3::new(-1.0, -1.0, -1.0).normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::execute;
    use crate::lang::{BooleanOp, CadCommand, CadSequence, Sidedness};

    fn cube() -> SolidModel {
        execute(&CadSequence::new(vec![
            CadCommand::sol(),
            CadCommand::line(1.0, 0.0),
            CadCommand::line(1.0, 1.0),
            CadCommand::line(0.0, 1.0),
            CadCommand::line(0.0, 0.0),
            CadCommand::extrude(
                0.0,
                0.0,
                0.0,
                [0.0, 0.0, 0.0],
                1.0,
                1.0,
                0.0,
                BooleanOp::New,
                Sidedness::One,
            ),
            CadCommand::eos(),
        ]))
        .unwrap()
    }

    #[test]
    fn background_is_exactly_zero() {
        let img = render_isometric(&cube(), 64).unwrap();
        // Corner pixels are outside the projected bounds.
        assert_eq!(img.get(0, 0), 0);
        assert_eq!(img.get(63, 63), 0);
        assert!(img.data.iter().any(|&v| v > 0));
    }

    #[test]
    fn cube_shows_three_distinct_shade_plateaus() {
        let img = render_isometric(&cube(), 192).unwrap();
        let mut hist = [0usize; 256];
        for &v in &img.data {
            if v > 0 {
                hist[v as usize] += 1;
            }
        }
        let nonzero: usize = hist.iter().sum();
        let plateaus = hist.iter().filter(|&&c| c as f64 > nonzero as f64 * 0.05).count();
        assert_eq!(plateaus, 3, "histogram {:?}", hist);
    }

    #[test]
    fn rendering_is_bitwise_deterministic() {
        let a = render_isometric(&cube(), 96).unwrap();
        let b = render_isometric(&cube(), 96).unwrap();
        assert_eq!(a, b);
    }
}
