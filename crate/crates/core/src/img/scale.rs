//! Axis-scale augmentation of command sequences.
//!
//! Scaling acts on world-space quantities: plane origins always, extrusion
//! extents along the (scaled) plane normal, and the in-plane sketch scale
//! when the plane is axis-aligned and the two in-plane factors agree.
//! Variants whose parameters leave their ranges, fail validation, or build
//! an empty solid are dropped with a reason.

use super::ImgError;
use crate::geom::{execute, is_valid, Vec3};
use crate::lang::{
    validate, BooleanOp, CadCommand, CadSequence, CommandType, Sidedness, SlotKind, SLOT_KINDS,
};

/// Resolution of the validity scan applied to each variant.
const VALIDITY_RESOLUTION: usize = 32;

#[derive(Debug, Clone)]
pub struct ScaledVariant {
    pub factors: (f64, f64, f64),
    pub sequence: CadSequence,
}

#[derive(Debug, Clone, Default)]
pub struct ScaleOutcome {
    pub variants: Vec<ScaledVariant>,
    pub dropped: Vec<((f64, f64, f64), String)>,
}

fn in_range(slot: usize, v: f64) -> bool {
    match SLOT_KINDS[slot] {
        SlotKind::Continuous { lo, hi } => (lo - 1e-9..=hi + 1e-9).contains(&v),
        SlotKind::Discrete { .. } => true,
    }
}

fn scale_extrude(cmd: &CadCommand, k: (f64, f64, f64)) -> Result<CadCommand, String> {
    let (theta, phi, gamma) = (cmd.p(5), cmd.p(6), cmd.p(7));
    let plane = crate::geom::SketchPlane::new(
        Vec3::new(cmd.p(8), cmd.p(9), cmd.p(10)),
        theta,
        phi,
        gamma,
        cmd.p(11),
    )
    .map_err(|e| e.to_string())?;
    let n = plane.normal();
    let origin = [cmd.p(8) * k.0, cmd.p(9) * k.1, cmd.p(10) * k.2];

    let axis = [n.x.abs(), n.y.abs(), n.z.abs()]
        .iter()
        .position(|&c| (c - 1.0).abs() < 1e-9);
    let (scale, e_factor) = match axis {
        Some(i) => {
            let ks = [k.0, k.1, k.2];
            let (kj, kl) = match i {
                0 => (ks[1], ks[2]),
                1 => (ks[0], ks[2]),
                _ => (ks[0], ks[1]),
            };
            if (kj - kl).abs() > 1e-12 {
                return Err(format!(
                    "anisotropic in-plane factors ({kj}, {kl}) are not representable"
                ));
            }
            (cmd.p(11) * kj, ks[i])
        }
        None => {
            // General plane: only the origin and the extents scale, the
            // latter by the length of the scaled normal.
            let sn = Vec3::new(n.x * k.0, n.y * k.1, n.z * k.2);
            (cmd.p(11), sn.norm())
        }
    };

    let e1 = cmd.p(12) * e_factor;
    let e2 = cmd.p(13) * e_factor;
    let checks = [(8usize, origin[0]), (9, origin[1]), (10, origin[2]), (11, scale), (12, e1), (13, e2)];
    for (slot, v) in checks {
        if !in_range(slot, v) {
            return Err(format!(
                "{} = {v:.4} out of range after scaling",
                crate::lang::SLOT_NAMES[slot]
            ));
        }
    }
    Ok(CadCommand::extrude(
        theta,
        phi,
        gamma,
        origin,
        scale,
        e1,
        e2,
        BooleanOp::from_code(cmd.p(14) as u8).map_err(|e| e.to_string())?,
        Sidedness::from_code(cmd.p(15) as u8).map_err(|e| e.to_string())?,
    ))
}

/// Produce the surviving scale variants of a sequence.
pub fn scale_variants(
    seq: &CadSequence,
    factors: &[(f64, f64, f64)],
) -> Result<ScaleOutcome, ImgError> {
    let mut outcome = ScaleOutcome::default();
    'factors: for &k in factors {
        let mut commands = Vec::with_capacity(seq.commands.len());
        for cmd in &seq.commands {
            match cmd.ty() {
                CommandType::Extrude => match scale_extrude(cmd, k) {
                    Ok(c) => commands.push(c),
                    Err(reason) => {
                        outcome.dropped.push((k, reason));
                        continue 'factors;
                    }
                },
                _ => commands.push(cmd.clone()),
            }
        }
        let variant = CadSequence::with_padded_len(commands, seq.padded_len);
        let report = validate(&variant);
        if !report.is_ok() {
            let v = &report.violations[0];
            outcome.dropped.push((k, format!("grammar violation {} at {}", v.rule, v.position)));
            continue;
        }
        let solid = match execute(&variant) {
            Ok(s) => s,
            Err(e) => {
                outcome.dropped.push((k, format!("kernel failure: {e}")));
                continue;
            }
        };
        if !is_valid(&solid, VALIDITY_RESOLUTION) {
            outcome.dropped.push((k, "empty solid after scaling".to_string()));
            continue;
        }
        outcome.variants.push(ScaledVariant { factors: k, sequence: variant });
    }
    Ok(outcome)
}

/// The five default augmentation factors. In-plane pairs stay equal so that
/// axis-aligned sketches remain representable; the uniform upscale is
/// expected to drop near the range edges.
pub const DEFAULT_FACTORS: [(f64, f64, f64); 5] = [
    (1.0, 1.0, 1.0),
    (0.7, 0.7, 1.0),
    (1.0, 1.0, 0.7),
    (0.8, 0.8, 0.8),
    (1.2, 1.2, 1.2),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::volume_estimate;

    fn cube_seq() -> CadSequence {
        CadSequence::new(vec![
            CadCommand::sol(),
            CadCommand::line(0.8, 0.0),
            CadCommand::line(0.8, 0.8),
            CadCommand::line(0.0, 0.8),
            CadCommand::line(0.0, 0.0),
            CadCommand::extrude(
                0.0,
                0.0,
                0.0,
                [0.0, 0.0, 0.0],
                1.0,
                0.8,
                0.0,
                BooleanOp::New,
                Sidedness::One,
            ),
            CadCommand::eos(),
        ])
    }

    #[test]
    fn identity_variant_always_survives() {
        let out = scale_variants(&cube_seq(), &[(1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(out.variants.len(), 1);
        assert_eq!(out.variants[0].sequence, cube_seq());
    }

    #[test]
    fn z_scaled_cube_has_scaled_volume() {
        // The cube's plane normal is +z, so (1, 1, 0.5) halves the height.
        let out = scale_variants(&cube_seq(), &[(1.0, 1.0, 0.5)]).unwrap();
        assert_eq!(out.variants.len(), 1, "{:?}", out.dropped);
        let orig = execute(&cube_seq()).unwrap();
        let scaled = execute(&out.variants[0].sequence).unwrap();
        let vo = volume_estimate(&orig, 100_000, 3).volume;
        let vs = volume_estimate(&scaled, 100_000, 3).volume;
        assert!((vs / vo - 0.5).abs() < 0.05, "ratio {}", vs / vo);
    }

    #[test]
    fn out_of_range_factor_is_dropped_with_reason() {
        let out = scale_variants(&cube_seq(), &[(1.0, 1.0, 2.0)]).unwrap();
        assert!(out.variants.is_empty());
        assert_eq!(out.dropped.len(), 1);
        assert!(out.dropped[0].1.contains("out of range"), "{:?}", out.dropped);
    }

    #[test]
    fn anisotropic_in_plane_factor_is_dropped() {
        let out = scale_variants(&cube_seq(), &[(0.5, 1.0, 1.0)]).unwrap();
        assert!(out.variants.is_empty());
        assert!(out.dropped[0].1.contains("not representable"));
    }
}
