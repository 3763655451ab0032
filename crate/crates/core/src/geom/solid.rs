//! Execution of command sequences into CSG solids over signed distance
//! fields, plus validity and Monte Carlo volume.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::profile::{build_profile, profile_sdf, Profile2D};
use super::{Aabb, GeomError, SketchPlane, Vec2, Vec3, BOUNDS_INFLATION, DEFAULT_RESOLUTION};
use crate::lang::{
    extrude_slab, slab_degenerate, BooleanOp, CadSequence, CommandType, Sidedness,
};

/// Extrusion parameters of one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrudeSpec {
    pub e1: f64,
    pub e2: f64,
    pub op: BooleanOp,
    pub sided: Sidedness,
}

/// One extruded-profile primitive: profile cross-section swept over a slab
/// along the sketch normal.
#[derive(Debug, Clone)]
pub struct Extrusion {
    pub profile: Profile2D,
    pub plane: SketchPlane,
    pub spec: ExtrudeSpec,
    slab_center: f64,
    slab_half: f64,
}

impl Extrusion {
    pub fn new(profile: Profile2D, plane: SketchPlane, spec: ExtrudeSpec) -> Result<Self, GeomError> {
        if slab_degenerate(spec.e1, spec.e2, spec.sided) {
            return Err(GeomError::DegenerateExtrude { position: 0 });
        }
        let (lo, hi) = extrude_slab(spec.e1, spec.e2, spec.sided);
        Ok(Extrusion {
            profile,
            plane,
            spec,
            slab_center: 0.5 * (lo + hi),
            slab_half: 0.5 * (hi - lo),
        })
    }

    /// Signed distance of the primitive: exact in sign everywhere, with the
    /// magnitude a lower bound on the Euclidean distance (the in-plane and
    /// along-normal terms combine by max).
    pub fn sdf(&self, p: Vec3) -> f64 {
        let (u, v, w) = self.plane.to_sketch(p);
        let d_profile = profile_sdf(&self.profile, Vec2::new(u, v)) * self.plane.scale;
        let d_slab = (w - self.slab_center).abs() - self.slab_half;
        d_profile.max(d_slab)
    }

    fn bounds(&self) -> Aabb {
        let (lo2, hi2) = self.profile.bbox();
        let (wlo, whi) = extrude_slab(self.spec.e1, self.spec.e2, self.spec.sided);
        let mut b = Aabb::EMPTY;
        for &u in &[lo2.x, hi2.x] {
            for &v in &[lo2.y, hi2.y] {
                for &w in &[wlo, whi] {
                    b.include(self.plane.to_world(u, v, w));
                }
            }
        }
        b
    }
}

/// CSG tree over extrusion primitives.
#[derive(Debug, Clone)]
pub enum CsgNode {
    Leaf(Box<Extrusion>),
    Join(Box<CsgNode>, Box<CsgNode>),
    Cut(Box<CsgNode>, Box<CsgNode>),
    Intersect(Box<CsgNode>, Box<CsgNode>),
}

impl CsgNode {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match self {
            CsgNode::Leaf(e) => e.sdf(p),
            CsgNode::Join(a, b) => a.sdf(p).min(b.sdf(p)),
            CsgNode::Cut(a, b) => a.sdf(p).max(-b.sdf(p)),
            CsgNode::Intersect(a, b) => a.sdf(p).max(b.sdf(p)),
        }
    }
}

/// A solid: the CSG tree and a box bounding its zero level set.
#[derive(Debug, Clone)]
pub struct SolidModel {
    pub root: CsgNode,
    pub bounds: Aabb,
}

impl SolidModel {
    pub fn sdf(&self, p: Vec3) -> f64 {
        self.root.sdf(p)
    }

    /// Cell edge length of an `r`-cell grid over the bounds (largest axis).
    pub fn cell_size(&self, resolution: usize) -> f64 {
        let d = self.bounds.max - self.bounds.min;
        d.x.max(d.y).max(d.z) / resolution as f64
    }
}

/// Monte Carlo volume estimate with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEstimate {
    pub volume: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Execute a sequence into a solid. The first extrusion must create a new
/// body; later `New` extrusions start disjoint bodies merged by implicit
/// join; `Join`/`Cut`/`Intersect` fold left-to-right.
pub fn execute(seq: &CadSequence) -> Result<SolidModel, GeomError> {
    let mut pending: Vec<(usize, crate::lang::CadCommand)> = Vec::new();
    let mut body: Option<CsgNode> = None;
    let mut bounds = Aabb::EMPTY;

    for (i, cmd) in seq.commands.iter().enumerate() {
        match cmd.ty() {
            CommandType::Eos => break,
            CommandType::Sol | CommandType::Line | CommandType::Arc | CommandType::Circle => {
                pending.push((i, cmd.clone()));
            }
            CommandType::Extrude => {
                if pending.is_empty() {
                    return Err(GeomError::ExtrudeWithoutProfile { position: i });
                }
                let base = pending[0].0;
                let cmds: Vec<_> = pending.drain(..).map(|(_, c)| c).collect();
                let profile = build_profile(&cmds).map_err(|e| offset_error(e, base))?;
                let plane = SketchPlane::from_command(cmd, i)?;
                let op = BooleanOp::from_code(cmd.p(14) as u8)?;
                let sided = Sidedness::from_code(cmd.p(15) as u8)?;
                let spec = ExtrudeSpec { e1: cmd.p(12), e2: cmd.p(13), op, sided };
                let prim = Extrusion::new(profile, plane, spec)
                    .map_err(|_| GeomError::DegenerateExtrude { position: i })?;
                bounds = bounds.union(prim.bounds());
                let leaf = CsgNode::Leaf(Box::new(prim));
                body = Some(match (body, op) {
                    (None, BooleanOp::New) => leaf,
                    (None, _) => return Err(GeomError::FirstExtrudeNotNew { position: i }),
                    (Some(b), BooleanOp::New) | (Some(b), BooleanOp::Join) => {
                        CsgNode::Join(Box::new(b), Box::new(leaf))
                    }
                    (Some(b), BooleanOp::Cut) => CsgNode::Cut(Box::new(b), Box::new(leaf)),
                    (Some(b), BooleanOp::Intersect) => {
                        CsgNode::Intersect(Box::new(b), Box::new(leaf))
                    }
                });
            }
        }
    }

    if !pending.is_empty() {
        return Err(GeomError::UnextrudedProfile);
    }
    let root = body.ok_or(GeomError::NoExtrusion)?;
    Ok(SolidModel { root, bounds: bounds.inflate(BOUNDS_INFLATION) })
}

fn offset_error(e: GeomError, base: usize) -> GeomError {
    match e {
        GeomError::OpenLoop { position } => GeomError::OpenLoop { position: position + base },
        GeomError::ZeroLengthSegment { position } => {
            GeomError::ZeroLengthSegment { position: position + base }
        }
        GeomError::DegenerateArc { position } => {
            GeomError::DegenerateArc { position: position + base }
        }
        GeomError::DegenerateCircle { position } => {
            GeomError::DegenerateCircle { position: position + base }
        }
        GeomError::CircleLoopNotSingleton { position } => {
            GeomError::CircleLoopNotSingleton { position: position + base }
        }
        GeomError::SketchOutsideLoop { position } => {
            GeomError::SketchOutsideLoop { position: position + base }
        }
        GeomError::EmptyLoop { position } => GeomError::EmptyLoop { position: position + base },
        other => other,
    }
}

/// A solid is valid when some grid cell center is strictly interior.
pub fn is_valid(solid: &SolidModel, resolution: usize) -> bool {
    let r = resolution.max(2);
    if solid.bounds.is_empty() {
        return false;
    }
    let d = solid.bounds.max - solid.bounds.min;
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let p = Vec3::new(
                    solid.bounds.min.x + d.x * ((i as f64 + 0.5) / r as f64),
                    solid.bounds.min.y + d.y * ((j as f64 + 0.5) / r as f64),
                    solid.bounds.min.z + d.z * ((k as f64 + 0.5) / r as f64),
                );
                if solid.sdf(p) < 0.0 {
                    return true;
                }
            }
        }
    }
    false
}

/// Convenience wrapper with the default grid resolution.
pub fn is_valid_default(solid: &SolidModel) -> bool {
    is_valid(solid, DEFAULT_RESOLUTION)
}

/// Monte Carlo volume over the bounds box; deterministic in the seed.
pub fn volume_estimate(solid: &SolidModel, n_samples: usize, seed: u64) -> VolumeEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let box_vol = solid.bounds.volume();
    let d = solid.bounds.max - solid.bounds.min;
    let mut hits = 0usize;
    for _ in 0..n_samples {
        let p = Vec3::new(
            solid.bounds.min.x + d.x * rng.random::<f64>(),
            solid.bounds.min.y + d.y * rng.random::<f64>(),
            solid.bounds.min.z + d.z * rng.random::<f64>(),
        );
        if solid.sdf(p) < 0.0 {
            hits += 1;
        }
    }
    let frac = hits as f64 / n_samples as f64;
    VolumeEstimate {
        volume: frac * box_vol,
        std_error: box_vol * (frac * (1.0 - frac) / n_samples as f64).sqrt(),
        n_samples,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::CadCommand;

    pub(crate) fn cube_seq() -> CadSequence {
        CadSequence::new(vec![
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
        ])
    }

    #[test]
    fn cube_sdf_center_and_outside() {
        let solid = execute(&cube_seq()).unwrap();
        assert!((solid.sdf(Vec3::new(0.5, 0.5, 0.5)) + 0.5).abs() < 1e-12);
        assert!(solid.sdf(Vec3::new(2.0, 0.5, 0.5)) > 0.0);
        assert!(is_valid(&solid, 16));
    }

    #[test]
    fn cylinder_sdf_on_axis() {
        let seq = CadSequence::new(vec![
            CadCommand::sol(),
            CadCommand::circle(0.0, 0.0, 0.5),
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
        ]);
        let solid = execute(&seq).unwrap();
        assert!((solid.sdf(Vec3::new(0.0, 0.0, 0.5)) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_sided_equals_shifted_one_sided() {
        let profile = |e1: f64, e2: f64, sided| {
            let seq = CadSequence::new(vec![
                CadCommand::sol(),
                CadCommand::line(1.0, 0.0),
                CadCommand::line(1.0, 1.0),
                CadCommand::line(0.0, 1.0),
                CadCommand::line(0.0, 0.0),
                CadCommand::extrude(0.0, 0.0, 0.0, [0.0, 0.0, 0.0], 1.0, e1, e2, BooleanOp::New, sided),
                CadCommand::eos(),
            ]);
            execute(&seq).unwrap()
        };
        let two = profile(0.5, 0.5, Sidedness::Two);
        let one = profile(1.0, 0.0, Sidedness::One);
        for k in 0..200 {
            let t = k as f64 / 199.0;
            let p = Vec3::new(-0.3 + 1.6 * t, 0.4, -0.8 + 1.8 * t);
            let shifted = Vec3::new(p.x, p.y, p.z + 0.5);
            assert!((two.sdf(p) - one.sdf(shifted)).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_intersection_is_invalid() {
        let seq = CadSequence::new(vec![
            CadCommand::sol(),
            CadCommand::line(0.5, 0.0),
            CadCommand::line(0.5, 0.5),
            CadCommand::line(0.0, 0.5),
            CadCommand::line(0.0, 0.0),
            CadCommand::extrude(
                0.0,
                0.0,
                0.0,
                [0.0, 0.0, 0.0],
                1.0,
                0.5,
                0.0,
                BooleanOp::New,
                Sidedness::One,
            ),
            CadCommand::sol(),
            CadCommand::line(0.5, 0.0),
            CadCommand::line(0.5, 0.5),
            CadCommand::line(0.0, 0.5),
            CadCommand::line(0.0, 0.0),
            CadCommand::extrude(
                0.0,
                0.0,
                0.0,
                [5.0, 5.0, 5.0],
                1.0,
                0.5,
                0.0,
                BooleanOp::Intersect,
                Sidedness::One,
            ),
            CadCommand::eos(),
        ]);
        let solid = execute(&seq).unwrap();
        assert!(!is_valid(&solid, 32));
    }

    #[test]
    fn first_extrude_must_be_new() {
        let mut seq = cube_seq();
        seq.commands[5] = CadCommand::extrude(
            0.0,
            0.0,
            0.0,
            [0.0, 0.0, 0.0],
            1.0,
            1.0,
            0.0,
            BooleanOp::Join,
            Sidedness::One,
        );
        assert!(matches!(execute(&seq), Err(GeomError::FirstExtrudeNotNew { position: 5 })));
    }

    #[test]
    fn cube_volume_within_three_sigma() {
        let solid = execute(&cube_seq()).unwrap();
        let est = volume_estimate(&solid, 200_000, 7);
        assert!((est.volume - 1.0).abs() < 3.0 * est.std_error + 1e-9, "{est:?}");
    }

    #[test]
    fn volume_is_deterministic_in_seed() {
        let solid = execute(&cube_seq()).unwrap();
        assert_eq!(volume_estimate(&solid, 1000, 3), volume_estimate(&solid, 1000, 3));
    }
}
