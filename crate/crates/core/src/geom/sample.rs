//! Surface point sampling and point-cloud utilities.
//!
//! Point clouds persist as whitespace-separated XYZ text or the "GCPC1"
//! sidecar: magic `GCPC1`, u32 LE point count, then count * 3 f32 LE.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::extract_mesh;
use super::{GeomError, SolidModel};

const MAGIC: &[u8; 5] = b"GCPC1";

/// Sampled surface points with the provenance that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub seed: u64,
    pub resolution: usize,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_xyz(&self, w: &mut impl Write) -> Result<(), GeomError> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        Ok(())
    }

    pub fn write_gcpc(&self, w: &mut impl Write) -> Result<(), GeomError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.points.len() as u32).to_le_bytes())?;
        for p in &self.points {
            for &c in p {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_gcpc(r: &mut impl Read) -> Result<Self, GeomError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(GeomError::Io("bad magic, expected GCPC1".to_string()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = [0.0f64; 3];
            for c in &mut p {
                r.read_exact(&mut b4)?;
                *c = f32::from_le_bytes(b4) as f64;
            }
            points.push(p);
        }
        Ok(PointCloud { points, seed: 0, resolution: 0 })
    }
}

/// Area-weighted uniform sampling over the extracted surface; deterministic
/// given the seed.
pub fn sample_surface(
    solid: &SolidModel,
    n_points: usize,
    seed: u64,
    resolution: usize,
) -> Result<PointCloud, GeomError> {
    let mesh = extract_mesh(solid, resolution);
    if mesh.is_empty() {
        return Err(GeomError::EmptySolid);
    }
    // Cumulative areas for triangle selection.
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for t in &mesh.triangles {
        total += t.area();
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(GeomError::EmptySolid);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let target = rng.random::<f64>() * total;
        let ti = cumulative.partition_point(|&c| c < target).min(mesh.triangles.len() - 1);
        let [a, b, c] = mesh.triangles[ti].vertices;
        // Uniform barycentric sample.
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let su = u.sqrt();
        let p = a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v);
        points.push([p.x, p.y, p.z]);
    }
    Ok(PointCloud { points, seed, resolution })
}

/// Recenter on the centroid and scale the longest axis-aligned extent to 2.
pub fn normalize(cloud: &PointCloud) -> PointCloud {
    let n = cloud.points.len().max(1) as f64;
    let mut centroid = [0.0f64; 3];
    for p in &cloud.points {
        for a in 0..3 {
            centroid[a] += p[a] / n;
        }
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    let scale = if extent > 0.0 { 2.0 / extent } else { 1.0 };
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| {
                [
                    (p[0] - centroid[0]) * scale,
                    (p[1] - centroid[1]) * scale,
                    (p[2] - centroid[2]) * scale,
                ]
            })
            .collect(),
        seed: cloud.seed,
        resolution: cloud.resolution,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::solid::execute;
    use crate::geom::Vec3;
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
    fn samples_lie_on_the_surface() {
        let solid = cube();
        let cloud = sample_surface(&solid, 2000, 11, 64).unwrap();
        assert_eq!(cloud.len(), 2000);
        let tol = 2.0 * solid.cell_size(64);
        for p in &cloud.points {
            let d = solid.sdf(Vec3::new(p[0], p[1], p[2])).abs();
            assert!(d <= tol, "residual {d} > {tol}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let solid = cube();
        let a = sample_surface(&solid, 256, 5, 32).unwrap();
        let b = sample_surface(&solid, 256, 5, 32).unwrap();
        assert_eq!(a, b);
        let c = sample_surface(&solid, 256, 6, 32).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cube_face_histogram_is_roughly_uniform() {
        // Classify samples by nearest face and chi-square test at 5 dof.
        let solid = cube();
        let cloud = sample_surface(&solid, 3000, 13, 64).unwrap();
        let mut counts = [0usize; 6];
        for p in &cloud.points {
            let dists = [
                p[0].abs(),
                (1.0 - p[0]).abs(),
                p[1].abs(),
                (1.0 - p[1]).abs(),
                p[2].abs(),
                (1.0 - p[2]).abs(),
            ];
            let (face, _) = dists
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            counts[face] += 1;
        }
        let expected = cloud.len() as f64 / 6.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square with 5 dof: p > 0.01 requires chi2 < 15.09.
        assert!(chi2 < 15.09, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn normalize_is_idempotent() {
        let solid = cube();
        let cloud = sample_surface(&solid, 500, 3, 32).unwrap();
        let once = normalize(&cloud);
        let twice = normalize(&once);
        for (a, b) in once.points.iter().zip(&twice.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
        // Longest extent is 2.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &once.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
        assert!((extent - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gcpc_roundtrip_at_f32_precision() {
        let solid = cube();
        let cloud = sample_surface(&solid, 64, 9, 16).unwrap();
        let mut buf = Vec::new();
        cloud.write_gcpc(&mut buf).unwrap();
        let back = PointCloud::read_gcpc(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
        assert!(sample_surface(&solid, 0, 1, 8).unwrap().is_empty());
    }

    #[test]
    fn empty_solid_cannot_be_sampled() {
        let mut solid = cube();
        solid.bounds.min = Vec3::new(5.0, 5.0, 5.0);
        solid.bounds.max = Vec3::new(6.0, 6.0, 6.0);
        assert!(matches!(sample_surface(&solid, 10, 0, 8), Err(GeomError::EmptySolid)));
    }
}
