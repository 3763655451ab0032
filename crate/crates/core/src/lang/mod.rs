//! The CAD command language: a six-token vocabulary where every command is a
//! fixed 17-dimensional record (type code + 16 parameter slots), with 8-bit
//! quantization, a sequence grammar, and canonical serializations.

mod codec;
mod grammar;
mod json;
mod quant;

pub use codec::{decode_sequence, encode_sequence, SeqMatrix};
pub use grammar::{
    extrude_slab, radius_degenerate, segment_degenerate, slab_degenerate, sweep_degenerate,
    validate, ValidationReport, Violation,
};
pub use json::{from_json, to_json};
pub use quant::{dequantize, dequantize_slot, quantize, quantize_slot};

use thiserror::Error;

/// Number of parameter slots in the fixed command record.
pub const PARAM_SLOTS: usize = 16;
/// Size of the command-type vocabulary.
pub const VOCAB_SIZE: usize = 6;
/// Number of quantization levels per continuous slot.
pub const QUANT_LEVELS: usize = 256;
/// Level stored in masked (inactive) slots of the quantized record.
pub const MASK_LEVEL: u8 = 255;
/// Default padded sequence length N.
pub const DEFAULT_PADDED_LEN: usize = 60;

/// Loop-closure tolerance: two quantization steps of the sketch-coordinate
/// range. Shared between the grammar validator and the geometry kernel.
pub const TAU_CLOSE: f64 = 2.0 * (2.0 / 255.0);
/// Below this, lengths/radii/extents count as degenerate.
pub const EPS_DEGENERATE: f64 = 1e-9;
/// Arc sweeps outside [EPS_SWEEP, 2*pi - EPS_SWEEP] are degenerate (the
/// chord/sweep construction has no finite radius at either end).
pub const EPS_SWEEP: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LangError {
    #[error("empty parameter range [{0}, {1}]")]
    EmptyRange(f64, f64),
    #[error("sequence overflow: {len} commands exceed padded length {padded}")]
    SequenceOverflow { len: usize, padded: usize },
    #[error("invalid token: type code {0} is not in 0..=5")]
    InvalidToken(u8),
    #[error("invalid discrete code {code} for slot {slot} (cardinality {cardinality})")]
    InvalidDiscrete { slot: usize, code: u8, cardinality: u8 },
    #[error("parse error at {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
}

impl From<std::io::Error> for LangError {
    fn from(e: std::io::Error) -> Self {
        LangError::Io(e.to_string())
    }
}

/// The six command types, with their vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CommandType {
    Sol = 0,
    Line = 1,
    Arc = 2,
    Circle = 3,
    Extrude = 4,
    Eos = 5,
}

impl CommandType {
    pub const ALL: [CommandType; VOCAB_SIZE] = [
        CommandType::Sol,
        CommandType::Line,
        CommandType::Arc,
        CommandType::Circle,
        CommandType::Extrude,
        CommandType::Eos,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, LangError> {
        Self::ALL.get(code as usize).copied().ok_or(LangError::InvalidToken(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            CommandType::Sol => "SOL",
            CommandType::Line => "Line",
            CommandType::Arc => "Arc",
            CommandType::Circle => "Circle",
            CommandType::Extrude => "Extrude",
            CommandType::Eos => "EOS",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.name() == name)
    }

    /// Static parameter layout for this command type.
    pub fn layout(self) -> &'static ParamLayout {
        layout_of(self)
    }
}

/// What a parameter slot holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotKind {
    /// Quantized over a closed interval.
    Continuous { lo: f64, hi: f64 },
    /// Raw categorical code, never range-quantized.
    Discrete { cardinality: u8 },
}

/// Names of the 16 slots in record order.
pub const SLOT_NAMES: [&str; PARAM_SLOTS] = [
    "x", "y", "alpha", "f", "r", "theta", "phi", "gamma", "px", "py", "pz", "s", "e1", "e2", "b",
    "u",
];

use std::f64::consts::PI;

/// Per-slot kinds and ranges. The interval table is the single place where
/// parameter normalization lives; swap it to match a different corpus.
pub const SLOT_KINDS: [SlotKind; PARAM_SLOTS] = [
    SlotKind::Continuous { lo: -1.0, hi: 1.0 },    // x
    SlotKind::Continuous { lo: -1.0, hi: 1.0 },    // y
    SlotKind::Continuous { lo: 0.0, hi: 2.0 * PI }, // alpha
    SlotKind::Discrete { cardinality: 2 },          // f: ccw / cw
    SlotKind::Continuous { lo: 0.0, hi: 1.0 },      // r, meaningful on (0, 1]
    SlotKind::Continuous { lo: 0.0, hi: PI },       // theta
    SlotKind::Continuous { lo: -PI, hi: PI },       // phi
    SlotKind::Continuous { lo: -PI, hi: PI },       // gamma
    SlotKind::Continuous { lo: -1.0, hi: 1.0 },     // px
    SlotKind::Continuous { lo: -1.0, hi: 1.0 },     // py
    SlotKind::Continuous { lo: -1.0, hi: 1.0 },     // pz
    SlotKind::Continuous { lo: 0.0, hi: 2.0 },      // s, meaningful on (0, 2]
    SlotKind::Continuous { lo: -1.0, hi: 1.0 },     // e1
    SlotKind::Continuous { lo: -1.0, hi: 1.0 },     // e2
    SlotKind::Discrete { cardinality: 4 },          // b: new / join / cut / intersect
    SlotKind::Discrete { cardinality: 2 },          // u: one-sided / two-sided
];

/// Which slots a command type populates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    active: [bool; PARAM_SLOTS],
}

impl ParamLayout {
    const fn from_slots(slots: &[usize]) -> Self {
        let mut active = [false; PARAM_SLOTS];
        let mut i = 0;
        while i < slots.len() {
            active[slots[i]] = true;
            i += 1;
        }
        ParamLayout { active }
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.active[slot]
    }

    pub fn active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..PARAM_SLOTS).filter(|&i| self.active[i])
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn kind(&self, slot: usize) -> SlotKind {
        SLOT_KINDS[slot]
    }
}

static LAYOUTS: [ParamLayout; VOCAB_SIZE] = [
    ParamLayout::from_slots(&[]),                                 // SOL
    ParamLayout::from_slots(&[0, 1]),                             // Line
    ParamLayout::from_slots(&[0, 1, 2, 3]),                       // Arc
    ParamLayout::from_slots(&[0, 1, 4]),                          // Circle
    ParamLayout::from_slots(&[5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]), // Extrude
    ParamLayout::from_slots(&[]),                                 // EOS
];

/// Static layout lookup; total over the six-type enumeration.
pub fn layout_of(ty: CommandType) -> &'static ParamLayout {
    &LAYOUTS[ty.code() as usize]
}

/// Arc direction flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ArcDirection {
    Ccw = 0,
    Cw = 1,
}

impl ArcDirection {
    pub fn from_code(code: u8) -> Result<Self, LangError> {
        match code {
            0 => Ok(ArcDirection::Ccw),
            1 => Ok(ArcDirection::Cw),
            _ => Err(LangError::InvalidDiscrete { slot: 3, code, cardinality: 2 }),
        }
    }
}

/// How an extruded body combines with the solid built so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum BooleanOp {
    New = 0,
    Join = 1,
    Cut = 2,
    Intersect = 3,
}

impl BooleanOp {
    pub fn from_code(code: u8) -> Result<Self, LangError> {
        match code {
            0 => Ok(BooleanOp::New),
            1 => Ok(BooleanOp::Join),
            2 => Ok(BooleanOp::Cut),
            3 => Ok(BooleanOp::Intersect),
            _ => Err(LangError::InvalidDiscrete { slot: 14, code, cardinality: 4 }),
        }
    }
}

/// One- versus two-sided extrusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Sidedness {
    One = 0,
    Two = 1,
}

impl Sidedness {
    pub fn from_code(code: u8) -> Result<Self, LangError> {
        match code {
            0 => Ok(Sidedness::One),
            1 => Ok(Sidedness::Two),
            _ => Err(LangError::InvalidDiscrete { slot: 15, code, cardinality: 2 }),
        }
    }
}

/// A single parameterized command. Inactive slots hold NaN as the mask
/// sentinel; equality compares the type and active slots only.
#[derive(Debug, Clone)]
pub struct CadCommand {
    ty: CommandType,
    params: [f64; PARAM_SLOTS],
}

impl CadCommand {
    fn with_params(ty: CommandType, pairs: &[(usize, f64)]) -> Self {
        let mut params = [f64::NAN; PARAM_SLOTS];
        for &(slot, v) in pairs {
            debug_assert!(ty.layout().is_active(slot));
            params[slot] = v;
        }
        CadCommand { ty, params }
    }

    pub fn sol() -> Self {
        Self::with_params(CommandType::Sol, &[])
    }

    pub fn eos() -> Self {
        Self::with_params(CommandType::Eos, &[])
    }

    pub fn line(x: f64, y: f64) -> Self {
        Self::with_params(CommandType::Line, &[(0, x), (1, y)])
    }

    pub fn arc(x: f64, y: f64, sweep: f64, dir: ArcDirection) -> Self {
        Self::with_params(CommandType::Arc, &[(0, x), (1, y), (2, sweep), (3, dir as u8 as f64)])
    }

    pub fn circle(x: f64, y: f64, r: f64) -> Self {
        Self::with_params(CommandType::Circle, &[(0, x), (1, y), (4, r)])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn extrude(
        theta: f64,
        phi: f64,
        gamma: f64,
        origin: [f64; 3],
        scale: f64,
        e1: f64,
        e2: f64,
        op: BooleanOp,
        sided: Sidedness,
    ) -> Self {
        Self::with_params(
            CommandType::Extrude,
            &[
                (5, theta),
                (6, phi),
                (7, gamma),
                (8, origin[0]),
                (9, origin[1]),
                (10, origin[2]),
                (11, scale),
                (12, e1),
                (13, e2),
                (14, op as u8 as f64),
                (15, sided as u8 as f64),
            ],
        )
    }

    pub fn ty(&self) -> CommandType {
        self.ty
    }

    /// Value of an active slot; `None` when the slot is masked for this type.
    pub fn param(&self, slot: usize) -> Option<f64> {
        self.ty.layout().is_active(slot).then(|| self.params[slot])
    }

    /// Active-slot value, panicking on masked slots. For kernel internals
    /// where the layout is known.
    pub(crate) fn p(&self, slot: usize) -> f64 {
        debug_assert!(self.ty.layout().is_active(slot));
        self.params[slot]
    }

    pub fn discrete(&self, slot: usize) -> Option<u8> {
        self.param(slot).map(|v| v as u8)
    }
}

impl PartialEq for CadCommand {
    fn eq(&self, other: &Self) -> bool {
        self.ty == other.ty
            && self.ty.layout().active_slots().all(|s| {
                self.params[s].to_bits() == other.params[s].to_bits()
            })
    }
}

/// An ordered command program plus its padded length N.
#[derive(Debug, Clone, PartialEq)]
pub struct CadSequence {
    pub commands: Vec<CadCommand>,
    pub padded_len: usize,
}

impl CadSequence {
    pub fn new(commands: Vec<CadCommand>) -> Self {
        CadSequence { commands, padded_len: DEFAULT_PADDED_LEN }
    }

    pub fn with_padded_len(commands: Vec<CadCommand>, padded_len: usize) -> Self {
        CadSequence { commands, padded_len }
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }
}

/// A command in quantized form: type code, 16 8-bit levels, and the mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCommand {
    pub type_code: u8,
    pub levels: [u8; PARAM_SLOTS],
    pub mask: [bool; PARAM_SLOTS],
}

impl QuantizedCommand {
    /// Quantize a command. Masked slots carry [`MASK_LEVEL`] with the mask
    /// bit set; continuous slots quantize over their range; discrete slots
    /// keep their raw code.
    pub fn from_command(cmd: &CadCommand) -> Result<Self, LangError> {
        let layout = cmd.ty().layout();
        let mut levels = [MASK_LEVEL; PARAM_SLOTS];
        let mut mask = [true; PARAM_SLOTS];
        for slot in layout.active_slots() {
            levels[slot] = quantize_slot(slot, cmd.p(slot))?;
            mask[slot] = false;
        }
        Ok(QuantizedCommand { type_code: cmd.ty().code(), levels, mask })
    }

    /// Back to the continuous form. Masked slots are restored to the NaN
    /// sentinel via the constructors.
    pub fn to_command(&self) -> Result<CadCommand, LangError> {
        let ty = CommandType::from_code(self.type_code)?;
        let mut pairs = Vec::new();
        for slot in ty.layout().active_slots() {
            pairs.push((slot, dequantize_slot(slot, self.levels[slot])?));
        }
        Ok(CadCommand::with_params(ty, &pairs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_active_counts_match_vocabulary() {
        let counts: Vec<usize> =
            CommandType::ALL.iter().map(|t| t.layout().active_count()).collect();
        assert_eq!(counts, vec![0, 2, 4, 3, 11, 0]);
    }

    #[test]
    fn line_layout_is_xy() {
        let slots: Vec<usize> = CommandType::Line.layout().active_slots().collect();
        assert_eq!(slots, vec![0, 1]);
    }

    #[test]
    fn sol_and_eos_have_no_slots() {
        assert_eq!(CommandType::Sol.layout().active_count(), 0);
        assert_eq!(CommandType::Eos.layout().active_count(), 0);
    }

    #[test]
    fn extrude_layout_is_tail_slots() {
        let slots: Vec<usize> = CommandType::Extrude.layout().active_slots().collect();
        assert_eq!(slots, (5..16).collect::<Vec<_>>());
    }

    #[test]
    fn every_slot_belongs_to_exactly_one_symbol() {
        // Union of per-type active slots covers all 16 named slots, and the
        // slot names are pairwise distinct.
        let mut covered = [false; PARAM_SLOTS];
        for ty in CommandType::ALL {
            for s in ty.layout().active_slots() {
                covered[s] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
        let mut names: Vec<&str> = SLOT_NAMES.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), PARAM_SLOTS);
    }

    #[test]
    fn bad_type_code_rejected() {
        assert_eq!(CommandType::from_code(7), Err(LangError::InvalidToken(7)));
    }

    #[test]
    fn command_equality_ignores_masked_slots() {
        let a = CadCommand::line(0.25, -0.5);
        let b = CadCommand::line(0.25, -0.5);
        assert_eq!(a, b);
        assert_ne!(a, CadCommand::line(0.25, 0.5));
        assert_ne!(a, CadCommand::sol());
    }
}
