//! Sequence grammar:
//!
//! ```text
//! program := (loop+ Extrude)+ EOS
//! loop    := SOL (Circle | curve+)
//! curve   := Line | Arc
//! ```
//!
//! Curve loops chain endpoint-to-endpoint from the loop origin (0, 0) and
//! must close within [`TAU_CLOSE`]. Circle loops are singletons. The
//! validator also applies the kernel's structural predicates (degenerate
//! segments, sweeps, radii, scales and extrusion extents, boolean-op
//! ordering) so that everything it accepts is executable.

use super::{
    BooleanOp, CadSequence, CommandType, Sidedness, SlotKind, EPS_DEGENERATE, EPS_SWEEP,
    TAU_CLOSE,
};

/// One grammar violation with the position and rule that raised it.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub position: usize,
    pub rule: &'static str,
    pub message: String,
}

/// Outcome of [`validate`]: ok, or the full list of violations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, position: usize, rule: &'static str, message: String) {
        self.violations.push(Violation { position, rule, message });
    }
}

/// True when two sketch points are too close to form a segment.
pub fn segment_degenerate(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    (dx * dx + dy * dy).sqrt() < EPS_DEGENERATE
}

/// True when an arc sweep has no finite-radius realization.
pub fn sweep_degenerate(sweep: f64) -> bool {
    !(EPS_SWEEP..=(2.0 * std::f64::consts::PI - EPS_SWEEP)).contains(&sweep)
}

/// True when a circle radius is degenerate.
pub fn radius_degenerate(r: f64) -> bool {
    r < EPS_DEGENERATE
}

/// World-space slab `[lo, hi]` along the sketch normal covered by an
/// extrusion: `[0, e1]` one-sided, `[-e2, e1]` two-sided.
pub fn extrude_slab(e1: f64, e2: f64, sided: Sidedness) -> (f64, f64) {
    let (a, b) = match sided {
        Sidedness::One => (0.0, e1),
        Sidedness::Two => (-e2, e1),
    };
    (a.min(b), a.max(b))
}

/// True when the slab has no thickness.
pub fn slab_degenerate(e1: f64, e2: f64, sided: Sidedness) -> bool {
    let (lo, hi) = extrude_slab(e1, e2, sided);
    hi - lo < EPS_DEGENERATE
}

struct LoopState {
    start_pos: usize,
    cur: (f64, f64),
    curves: usize,
    has_circle: bool,
}

/// Check a sequence against the grammar. Every violation is reported with
/// its command position and rule name; an empty report means the sequence is
/// executable by the geometry kernel.
pub fn validate(seq: &CadSequence) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cmds = &seq.commands;

    if cmds.len() > seq.padded_len {
        report.push(
            cmds.len() - 1,
            "sequence-overflow",
            format!("{} commands exceed padded length {}", cmds.len(), seq.padded_len),
        );
    }

    // Locate the terminator; only EOS padding may follow it.
    let first_eos = cmds.iter().position(|c| c.ty() == CommandType::Eos);
    let content_end = match first_eos {
        Some(i) => {
            for (j, c) in cmds.iter().enumerate().skip(i + 1) {
                if c.ty() != CommandType::Eos {
                    report.push(
                        j,
                        "content-after-eos",
                        format!("{} found after the terminating EOS", c.ty().name()),
                    );
                }
            }
            i
        }
        None => {
            report.push(
                cmds.len().saturating_sub(1),
                "missing-eos",
                "sequence has no EOS terminator".to_string(),
            );
            cmds.len()
        }
    };

    // Range and discrete-code checks on every content command.
    for (i, cmd) in cmds.iter().take(content_end).enumerate() {
        let layout = cmd.ty().layout();
        for slot in layout.active_slots() {
            let v = cmd.p(slot);
            match layout.kind(slot) {
                SlotKind::Continuous { lo, hi } => {
                    if !v.is_finite() || v < lo - 1e-9 || v > hi + 1e-9 {
                        report.push(
                            i,
                            "param-out-of-range",
                            format!(
                                "{}.{} = {v} outside [{lo}, {hi}]",
                                cmd.ty().name(),
                                super::SLOT_NAMES[slot]
                            ),
                        );
                    }
                }
                SlotKind::Discrete { cardinality } => {
                    if !v.is_finite() || v.fract() != 0.0 || v < 0.0 || v >= cardinality as f64 {
                        report.push(
                            i,
                            "invalid-discrete",
                            format!(
                                "{}.{} = {v} not a code below {cardinality}",
                                cmd.ty().name(),
                                super::SLOT_NAMES[slot]
                            ),
                        );
                    }
                }
            }
        }
    }

    fn close_loop(
        open: &mut Option<LoopState>,
        report: &mut ValidationReport,
        pending: &mut usize,
        at: usize,
    ) {
        if let Some(lp) = open.take() {
            if lp.has_circle {
                *pending += 1;
            } else if lp.curves == 0 {
                report.push(lp.start_pos, "empty-loop", "loop has no curves".to_string());
            } else {
                let (x, y) = lp.cur;
                if (x * x + y * y).sqrt() > TAU_CLOSE {
                    report.push(
                        at,
                        "open-loop",
                        format!("loop endpoint ({x:.4}, {y:.4}) does not return to the origin"),
                    );
                } else {
                    *pending += 1;
                }
            }
        }
    }

    let mut open: Option<LoopState> = None;
    let mut pending_loops = 0usize;
    let mut extrudes = 0usize;

    for (i, cmd) in cmds.iter().take(content_end).enumerate() {
        match cmd.ty() {
            CommandType::Sol => {
                close_loop(&mut open, &mut report, &mut pending_loops, i);
                open = Some(LoopState { start_pos: i, cur: (0.0, 0.0), curves: 0, has_circle: false });
            }
            CommandType::Line | CommandType::Arc => {
                let end = (cmd.p(0), cmd.p(1));
                match open.as_mut() {
                    None => report.push(
                        i,
                        "sketch-outside-loop",
                        format!("{} before any SOL", cmd.ty().name()),
                    ),
                    Some(lp) if lp.has_circle => {
                        report.push(
                            i,
                            "circle-loop-not-singleton",
                            "curve follows a circle in the same loop".to_string(),
                        );
                    }
                    Some(lp) => {
                        if cmd.ty() == CommandType::Line {
                            if segment_degenerate(lp.cur, end) {
                                report.push(
                                    i,
                                    "zero-length-segment",
                                    "line endpoint repeats the running point".to_string(),
                                );
                            }
                        } else {
                            if segment_degenerate(lp.cur, end) {
                                report.push(
                                    i,
                                    "degenerate-arc",
                                    "arc chord has zero length".to_string(),
                                );
                            }
                            if sweep_degenerate(cmd.p(2)) {
                                report.push(
                                    i,
                                    "degenerate-arc",
                                    format!("sweep {} has no finite radius", cmd.p(2)),
                                );
                            }
                        }
                        lp.cur = end;
                        lp.curves += 1;
                    }
                }
            }
            CommandType::Circle => match open.as_mut() {
                None => report.push(
                    i,
                    "sketch-outside-loop",
                    "Circle before any SOL".to_string(),
                ),
                Some(lp) if lp.curves > 0 || lp.has_circle => {
                    report.push(
                        i,
                        "circle-loop-not-singleton",
                        "circle shares a loop with other commands".to_string(),
                    );
                }
                Some(lp) => {
                    if radius_degenerate(cmd.p(4)) {
                        report.push(i, "degenerate-circle", format!("radius {}", cmd.p(4)));
                    }
                    lp.has_circle = true;
                }
            },
            CommandType::Extrude => {
                close_loop(&mut open, &mut report, &mut pending_loops, i);
                if pending_loops == 0 {
                    report.push(
                        i,
                        "extrude-without-profile",
                        "no completed loop precedes this extrusion".to_string(),
                    );
                }
                if cmd.p(11) < EPS_DEGENERATE {
                    report.push(i, "degenerate-scale", format!("sketch scale {}", cmd.p(11)));
                }
                let (b, u) = (cmd.p(14), cmd.p(15));
                let op_ok = b.fract() == 0.0 && (0.0..4.0).contains(&b);
                let side_ok = u.fract() == 0.0 && (0.0..2.0).contains(&u);
                if op_ok && side_ok {
                    let sided = if u == 0.0 { Sidedness::One } else { Sidedness::Two };
                    if slab_degenerate(cmd.p(12), cmd.p(13), sided) {
                        report.push(
                            i,
                            "degenerate-extrude",
                            format!("extents e1={} e2={} have no thickness", cmd.p(12), cmd.p(13)),
                        );
                    }
                    if extrudes == 0 && b != BooleanOp::New as u8 as f64 {
                        report.push(
                            i,
                            "first-extrude-not-new",
                            "first extrusion must create a new body".to_string(),
                        );
                    }
                }
                pending_loops = 0;
                extrudes += 1;
            }
            CommandType::Eos => unreachable!("content excludes the terminator"),
        }
    }

    let at = content_end.saturating_sub(1);
    close_loop(&mut open, &mut report, &mut pending_loops, content_end.saturating_sub(1));
    if pending_loops > 0 {
        report.push(at, "unextruded-profile", "trailing loops are never extruded".to_string());
    }
    if extrudes == 0 && content_end > 0 {
        report.push(at, "no-extrusion", "program builds no solid".to_string());
    }
    if content_end == 0 && first_eos.is_some() {
        report.push(0, "empty-program", "sequence is only padding".to_string());
    }

    report
}
