//! Procedural sampling of grammar-valid programs: 1-4 extrusion steps over
//! mixed loop shapes, rejection-filtered so that both the exact and the
//! quantized form of every emitted program validate and build a non-empty
//! solid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gencad_core::geom::{execute, is_valid};
use gencad_core::lang::{
    decode_sequence, encode_sequence, validate, ArcDirection, BooleanOp, CadCommand, CadSequence,
    Sidedness,
};

/// Validity-scan resolution used while filtering candidates.
const FILTER_RESOLUTION: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    /// Single extrusion, single loop, axis-aligned planes.
    Easy,
    /// Up to two extrusions, optional holes, quarter-turn planes.
    Medium,
    /// Up to four extrusions, tilted planes, all boolean ops.
    Hard,
}

impl std::str::FromStr for Difficulty {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty {other:?} (easy|medium|hard)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub count: usize,
    pub seed: u64,
    pub difficulty: Difficulty,
    pub padded_len: usize,
    /// Hard cap on commands per program (terminator included).
    pub max_commands: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            count: 100,
            seed: 0,
            difficulty: Difficulty::Medium,
            padded_len: gencad_core::lang::DEFAULT_PADDED_LEN,
            max_commands: gencad_core::lang::DEFAULT_PADDED_LEN,
        }
    }
}

fn rangef(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// One closed loop starting and ending at the loop origin.
fn sample_loop(rng: &mut ChaCha8Rng, allow_arcs: bool) -> Vec<CadCommand> {
    let kind = rng.random_range(0..if allow_arcs { 5 } else { 3 });
    match kind {
        0 => {
            // Rectangle.
            let w = rangef(rng, 0.25, 0.85);
            let h = rangef(rng, 0.25, 0.85);
            vec![
                CadCommand::sol(),
                CadCommand::line(w, 0.0),
                CadCommand::line(w, h),
                CadCommand::line(0.0, h),
                CadCommand::line(0.0, 0.0),
            ]
        }
        1 => {
            // Triangle.
            let w = rangef(rng, 0.3, 0.85);
            let px = rangef(rng, 0.1, w - 0.05);
            let h = rangef(rng, 0.25, 0.8);
            vec![
                CadCommand::sol(),
                CadCommand::line(w, 0.0),
                CadCommand::line(px, h),
                CadCommand::line(0.0, 0.0),
            ]
        }
        2 => {
            // Circle.
            let r = rangef(rng, 0.18, 0.45);
            let cx = rangef(rng, -0.2, 0.2);
            let cy = rangef(rng, -0.2, 0.2);
            vec![CadCommand::sol(), CadCommand::circle(cx, cy, r)]
        }
        3 => {
            // Regular polygon through the origin.
            let sides = rng.random_range(5..=6);
            let r = rangef(rng, 0.2, 0.42);
            let mut cmds = vec![CadCommand::sol()];
            for k in 1..sides {
                let a = std::f64::consts::PI + std::f64::consts::TAU * k as f64 / sides as f64;
                cmds.push(CadCommand::line(r + r * a.cos(), r * a.sin()));
            }
            cmds.push(CadCommand::line(0.0, 0.0));
            cmds
        }
        _ => {
            // Stadium: two lines joined by semicircular caps.
            let w = rangef(rng, 0.35, 0.8);
            let h = rangef(rng, 0.18, 0.45);
            vec![
                CadCommand::sol(),
                CadCommand::line(w, 0.0),
                CadCommand::arc(w, h, std::f64::consts::PI, ArcDirection::Ccw),
                CadCommand::line(0.0, h),
                CadCommand::arc(0.0, 0.0, std::f64::consts::PI, ArcDirection::Ccw),
            ]
        }
    }
}

/// Centroid-ish interior point and a safe hole radius for a sampled loop.
fn hole_for(loop_cmds: &[CadCommand], rng: &mut ChaCha8Rng) -> Option<Vec<CadCommand>> {
    // Compute the bounding box of loop endpoints; holes are placed at the
    // midpoint, which is interior for every convex generator above except
    // circles near the edge, so only rectangles and polygons get holes.
    let pts: Vec<(f64, f64)> = loop_cmds
        .iter()
        .filter_map(|c| match c.ty() {
            gencad_core::lang::CommandType::Line => Some((c.param(0)?, c.param(1)?)),
            _ => None,
        })
        .collect();
    if pts.len() < 4 {
        return None;
    }
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in &pts {
        lo_x = lo_x.min(*x);
        lo_y = lo_y.min(*y);
        hi_x = hi_x.max(*x);
        hi_y = hi_y.max(*y);
    }
    let r_max = 0.25 * (hi_x - lo_x).min(hi_y - lo_y);
    if r_max < 0.06 {
        return None;
    }
    let r = rangef(rng, 0.05, r_max);
    Some(vec![
        CadCommand::sol(),
        CadCommand::circle(0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y), r),
    ])
}

fn sample_plane(rng: &mut ChaCha8Rng, difficulty: Difficulty, first: bool) -> (f64, f64, f64, [f64; 3], f64) {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};
    let (theta, phi, gamma) = match difficulty {
        Difficulty::Easy => (0.0, 0.0, 0.0),
        Difficulty::Medium => {
            let t = [0.0, FRAC_PI_2][rng.random_range(0..2)];
            (t, 0.0, 0.0)
        }
        Difficulty::Hard => (
            [0.0, FRAC_PI_6, FRAC_PI_2][rng.random_range(0..3)],
            rangef(rng, -FRAC_PI_6, FRAC_PI_6),
            rangef(rng, -FRAC_PI_6, FRAC_PI_6),
        ),
    };
    let spread = if first { 0.15 } else { 0.3 };
    let origin = [
        rangef(rng, -spread, spread),
        rangef(rng, -spread, spread),
        rangef(rng, -spread, spread),
    ];
    let scale = rangef(rng, 0.6, 1.1);
    (theta, phi, gamma, origin, scale)
}

fn sample_candidate(rng: &mut ChaCha8Rng, opts: &SynthOptions) -> CadSequence {
    let n_extrudes = match opts.difficulty {
        Difficulty::Easy => 1,
        Difficulty::Medium => rng.random_range(1..=2),
        Difficulty::Hard => rng.random_range(1..=4),
    };
    let allow_arcs = opts.difficulty != Difficulty::Easy;
    let mut commands: Vec<CadCommand> = Vec::new();
    for step in 0..n_extrudes {
        let base = sample_loop(rng, allow_arcs);
        let with_hole = opts.difficulty != Difficulty::Easy && rng.random::<f64>() < 0.25;
        let hole = if with_hole { hole_for(&base, rng) } else { None };
        commands.extend(base);
        if let Some(h) = hole {
            commands.extend(h);
        }
        let (theta, phi, gamma, origin, scale) = sample_plane(rng, opts.difficulty, step == 0);
        let e1 = rangef(rng, 0.2, 0.7);
        let two_sided = rng.random::<f64>() < 0.25;
        let (e2, sided) =
            if two_sided { (rangef(rng, 0.1, 0.4), Sidedness::Two) } else { (0.0, Sidedness::One) };
        let op = if step == 0 {
            BooleanOp::New
        } else {
            match rng.random_range(0..10) {
                0..=4 => BooleanOp::Join,
                5..=7 => BooleanOp::Cut,
                8 => BooleanOp::Intersect,
                _ => BooleanOp::New,
            }
        };
        commands.push(CadCommand::extrude(theta, phi, gamma, origin, scale, e1, e2, op, sided));
    }
    commands.push(CadCommand::eos());
    CadSequence::with_padded_len(commands, opts.padded_len)
}

/// Whether a program (in its quantized form too) validates and builds a
/// non-empty solid.
fn accept(seq: &CadSequence) -> bool {
    if seq.len() > seq.padded_len {
        return false;
    }
    if !validate(seq).is_ok() {
        return false;
    }
    let solid = match execute(seq) {
        Ok(s) => s,
        Err(_) => return false,
    };
    if !is_valid(&solid, FILTER_RESOLUTION) {
        return false;
    }
    // The 8-bit form must survive too: training and metrics consume it.
    let quantized = match encode_sequence(seq).and_then(|m| decode_sequence(&m)) {
        Ok(q) => q,
        Err(_) => return false,
    };
    if !validate(&quantized).is_ok() {
        return false;
    }
    match execute(&quantized) {
        Ok(s) => is_valid(&s, FILTER_RESOLUTION),
        Err(_) => false,
    }
}

/// Sample `opts.count` valid programs; deterministic in the seed.
pub fn synth_corpus(opts: &SynthOptions) -> Vec<CadSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.count);
    while out.len() < opts.count {
        let candidate = sample_candidate(&mut rng, opts);
        if candidate.len() <= opts.max_commands && accept(&candidate) {
            out.push(candidate);
        }
    }
    out
}
