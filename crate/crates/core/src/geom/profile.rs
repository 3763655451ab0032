//! Closed 2D profiles built from chained sketch commands, with exact
//! Euclidean distance and even-odd interior classification.

use std::f64::consts::{PI, TAU};

use super::{GeomError, Vec2};
use crate::lang::{
    radius_degenerate, segment_degenerate, sweep_degenerate, ArcDirection, CadCommand,
    CommandType, TAU_CLOSE,
};

/// One boundary piece of a loop.
#[derive(Debug, Clone)]
pub enum Segment {
    Line {
        a: Vec2,
        b: Vec2,
    },
    /// Circular arc from `start` to `end`, sweeping `sweep` radians around
    /// `center` counter-clockwise (`ccw`) or clockwise.
    Arc {
        start: Vec2,
        end: Vec2,
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
        ccw: bool,
    },
    Circle {
        center: Vec2,
        radius: f64,
    },
}

/// A profile: one or more closed loops, combined by even-odd parity so a
/// nested loop is a hole.
#[derive(Debug, Clone, Default)]
pub struct Profile2D {
    pub loops: Vec<Vec<Segment>>,
}

fn wrap_tau(a: f64) -> f64 {
    let mut a = a % TAU;
    if a < 0.0 {
        a += TAU;
    }
    a
}

/// Realize an arc from the running start point, the endpoint, the sweep and
/// the direction flag: the center sits on the chord bisector at the offset
/// that makes the swept angle come out right.
fn make_arc(start: Vec2, end: Vec2, sweep: f64, dir: ArcDirection) -> Segment {
    let chord = end - start;
    let half = 0.5 * sweep;
    let radius = chord.norm() / (2.0 * half.sin().abs());
    let mid = (start + end) * 0.5;
    let n = chord.perp().normalized();
    let offset = radius * half.cos();
    let ccw = dir == ArcDirection::Ccw;
    let center = if ccw { mid + n * offset } else { mid - n * offset };
    Segment::Arc {
        start,
        end,
        center,
        radius,
        start_angle: (start - center).angle(),
        sweep,
        ccw,
    }
}

impl Segment {
    /// Exact Euclidean distance from `q` to the segment.
    pub fn distance(&self, q: Vec2) -> f64 {
        match *self {
            Segment::Line { a, b } => {
                let ab = b - a;
                let t = ((q - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
                (q - (a + ab * t)).norm()
            }
            Segment::Circle { center, radius } => ((q - center).norm() - radius).abs(),
            Segment::Arc { start, end, center, radius, start_angle, sweep, ccw } => {
                let rel = wrap_tau(if ccw {
                    (q - center).angle() - start_angle
                } else {
                    start_angle - (q - center).angle()
                });
                if rel <= sweep {
                    ((q - center).norm() - radius).abs()
                } else {
                    (q - start).norm().min((q - end).norm())
                }
            }
        }
    }

    /// Crossings of the horizontal ray from `q` toward +x. `None` marks a
    /// numerically suspicious configuration the caller should retry with a
    /// nudged ray.
    fn ray_crossings(&self, q: Vec2, eps: f64) -> Option<usize> {
        match *self {
            Segment::Line { a, b } => {
                if (a.y - q.y).abs() < eps || (b.y - q.y).abs() < eps {
                    return None;
                }
                if (a.y > q.y) == (b.y > q.y) {
                    return Some(0);
                }
                let t = (q.y - a.y) / (b.y - a.y);
                let x = a.x + t * (b.x - a.x);
                if (x - q.x).abs() < eps {
                    return None;
                }
                Some(usize::from(x > q.x))
            }
            Segment::Circle { center, radius } => {
                circle_ray_hits(center, radius, q, eps).map(|hits| hits.len())
            }
            Segment::Arc { center, radius, start_angle, sweep, ccw, start, end } => {
                if (start.y - q.y).abs() < eps || (end.y - q.y).abs() < eps {
                    return None;
                }
                let hits = circle_ray_hits(center, radius, q, eps)?;
                let mut n = 0;
                for p in hits {
                    let rel = wrap_tau(if ccw {
                        (p - center).angle() - start_angle
                    } else {
                        start_angle - (p - center).angle()
                    });
                    if rel <= sweep {
                        n += 1;
                    }
                }
                Some(n)
            }
        }
    }

    pub(super) fn bbox(&self) -> (Vec2, Vec2) {
        match *self {
            Segment::Line { a, b } => {
                (Vec2::new(a.x.min(b.x), a.y.min(b.y)), Vec2::new(a.x.max(b.x), a.y.max(b.y)))
            }
            Segment::Circle { center, radius } => (
                Vec2::new(center.x - radius, center.y - radius),
                Vec2::new(center.x + radius, center.y + radius),
            ),
            Segment::Arc { start, end, center, radius, start_angle, sweep, ccw } => {
                let mut lo = Vec2::new(start.x.min(end.x), start.y.min(end.y));
                let mut hi = Vec2::new(start.x.max(end.x), start.y.max(end.y));
                // Include axis extremes the sweep passes through.
                for k in 0..4 {
                    let a = k as f64 * PI / 2.0;
                    let rel = wrap_tau(if ccw { a - start_angle } else { start_angle - a });
                    if rel <= sweep {
                        let p = center + Vec2::new(a.cos(), a.sin()) * radius;
                        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
                    }
                }
                (lo, hi)
            }
        }
    }
}

/// Intersections of the +x ray from `q` with a circle, or `None` when the
/// ray grazes the circle or passes within `eps` of `q.x`.
fn circle_ray_hits(center: Vec2, radius: f64, q: Vec2, eps: f64) -> Option<Vec<Vec2>> {
    let dy = q.y - center.y;
    let disc = radius * radius - dy * dy;
    if disc.abs() < eps * radius.max(1.0) {
        return None; // tangent
    }
    if disc < 0.0 {
        return Some(Vec::new());
    }
    let dx = disc.sqrt();
    let mut hits = Vec::new();
    for x in [center.x - dx, center.x + dx] {
        if (x - q.x).abs() < eps {
            return None;
        }
        if x > q.x {
            hits.push(Vec2::new(x, q.y));
        }
    }
    Some(hits)
}

impl Profile2D {
    /// Even-odd interior test, retrying with a nudged ray when the default
    /// one hits a vertex or tangency.
    pub fn contains(&self, q: Vec2) -> bool {
        const OFFSETS: [f64; 6] = [0.0, 3.1e-9, -7.3e-9, 1.9e-8, -4.7e-8, 1.1e-7];
        let scale = 1.0 + q.y.abs();
        'attempt: for &off in &OFFSETS {
            let qq = Vec2::new(q.x, q.y + off * scale);
            let mut total = 0usize;
            for lp in &self.loops {
                for seg in lp {
                    match seg.ray_crossings(qq, 1e-12 * scale) {
                        Some(n) => total += n,
                        None => continue 'attempt,
                    }
                }
            }
            return total % 2 == 1;
        }
        // Every nudge hit a degeneracy; treat as boundary (outside).
        false
    }

    /// Distance from `q` to the nearest boundary point across all loops.
    pub fn boundary_distance(&self, q: Vec2) -> f64 {
        self.loops
            .iter()
            .flatten()
            .map(|s| s.distance(q))
            .fold(f64::INFINITY, f64::min)
    }

    pub(super) fn bbox(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for seg in self.loops.iter().flatten() {
            let (a, b) = seg.bbox();
            lo = Vec2::new(lo.x.min(a.x), lo.y.min(a.y));
            hi = Vec2::new(hi.x.max(b.x), hi.y.max(b.y));
        }
        (lo, hi)
    }
}

/// Signed distance to the profile: negative inside (even-odd parity),
/// positive outside, magnitude the exact distance to the boundary.
pub fn profile_sdf(profile: &Profile2D, q: Vec2) -> f64 {
    let d = profile.boundary_distance(q);
    if profile.contains(q) {
        -d
    } else {
        d
    }
}

/// Build a profile from the sketch commands of one extrusion step
/// (`SOL ... SOL ...`, no Extrude/EOS). Curve loops chain from the origin
/// and must close within [`TAU_CLOSE`]; the final endpoint is snapped onto
/// the start so downstream geometry sees exactly closed loops.
pub fn build_profile(commands: &[CadCommand]) -> Result<Profile2D, GeomError> {
    struct OpenLoop {
        start_pos: usize,
        cur: Vec2,
        segments: Vec<Segment>,
        pending: Vec<(usize, PendingCurve)>,
        is_circle: bool,
    }
    enum PendingCurve {
        Line { end: Vec2 },
        Arc { end: Vec2, sweep: f64, dir: ArcDirection },
    }

    fn close(lp: OpenLoop, at: usize) -> Result<Vec<Segment>, GeomError> {
        if lp.is_circle {
            return Ok(lp.segments);
        }
        if lp.pending.is_empty() {
            return Err(GeomError::EmptyLoop { position: lp.start_pos });
        }
        if lp.cur.norm() > TAU_CLOSE {
            return Err(GeomError::OpenLoop { position: at });
        }
        // Snap the last endpoint to the loop origin, then realize segments.
        let mut segments = lp.segments;
        let mut cur = Vec2::new(0.0, 0.0);
        let n = lp.pending.len();
        for (i, (pos, curve)) in lp.pending.into_iter().enumerate() {
            let snap = i + 1 == n;
            match curve {
                PendingCurve::Line { end } => {
                    let end = if snap { Vec2::new(0.0, 0.0) } else { end };
                    if segment_degenerate((cur.x, cur.y), (end.x, end.y)) {
                        return Err(GeomError::ZeroLengthSegment { position: pos });
                    }
                    segments.push(Segment::Line { a: cur, b: end });
                    cur = end;
                }
                PendingCurve::Arc { end, sweep, dir } => {
                    let end = if snap { Vec2::new(0.0, 0.0) } else { end };
                    if segment_degenerate((cur.x, cur.y), (end.x, end.y))
                        || sweep_degenerate(sweep)
                    {
                        return Err(GeomError::DegenerateArc { position: pos });
                    }
                    segments.push(make_arc(cur, end, sweep, dir));
                    cur = end;
                }
            }
        }
        Ok(segments)
    }

    let mut loops = Vec::new();
    let mut open: Option<OpenLoop> = None;
    for (i, cmd) in commands.iter().enumerate() {
        match cmd.ty() {
            CommandType::Sol => {
                if let Some(lp) = open.take() {
                    loops.push(close(lp, i)?);
                }
                open = Some(OpenLoop {
                    start_pos: i,
                    cur: Vec2::new(0.0, 0.0),
                    segments: Vec::new(),
                    pending: Vec::new(),
                    is_circle: false,
                });
            }
            CommandType::Line | CommandType::Arc => {
                let lp = open.as_mut().ok_or(GeomError::SketchOutsideLoop { position: i })?;
                if lp.is_circle {
                    return Err(GeomError::CircleLoopNotSingleton { position: i });
                }
                let end = Vec2::new(cmd.p(0), cmd.p(1));
                if cmd.ty() == CommandType::Line {
                    lp.pending.push((i, PendingCurve::Line { end }));
                } else {
                    lp.pending.push((
                        i,
                        PendingCurve::Arc {
                            end,
                            sweep: cmd.p(2),
                            dir: ArcDirection::from_code(cmd.p(3) as u8)?,
                        },
                    ));
                }
                lp.cur = end;
            }
            CommandType::Circle => {
                let lp = open.as_mut().ok_or(GeomError::SketchOutsideLoop { position: i })?;
                if lp.is_circle || !lp.pending.is_empty() {
                    return Err(GeomError::CircleLoopNotSingleton { position: i });
                }
                let r = cmd.p(4);
                if radius_degenerate(r) {
                    return Err(GeomError::DegenerateCircle { position: i });
                }
                lp.segments.push(Segment::Circle { center: Vec2::new(cmd.p(0), cmd.p(1)), radius: r });
                lp.is_circle = true;
            }
            CommandType::Extrude | CommandType::Eos => {
                return Err(GeomError::SketchOutsideLoop { position: i })
            }
        }
    }
    if let Some(lp) = open.take() {
        let at = commands.len().saturating_sub(1);
        loops.push(close(lp, at)?);
    }
    if loops.is_empty() {
        return Err(GeomError::EmptyLoop { position: 0 });
    }
    Ok(Profile2D { loops })
}
