//! The padded N x 17 integer matrix form of a sequence and its "GCSQ1"
//! sidecar binary.
//!
//! Sidecar layout, all little-endian:
//!
//! ```text
//! magic   5 bytes  "GCSQ1"
//! rows    u32      padded length N
//! cols    u32      always 17
//! payload rows*cols u8, row-major: [type_code, level_0, ..., level_15]
//! ```

use std::io::{Read, Write};

use super::{
    CadCommand, CadSequence, CommandType, LangError, QuantizedCommand, MASK_LEVEL, PARAM_SLOTS,
};

const MAGIC: &[u8; 5] = b"GCSQ1";
pub const ROW_WIDTH: usize = 1 + PARAM_SLOTS;

/// A padded sequence in quantized matrix form: one 17-integer row per
/// position, padding rows identical to the EOS row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqMatrix {
    rows: Vec<[u8; ROW_WIDTH]>,
}

impl SeqMatrix {
    pub fn from_rows(rows: Vec<[u8; ROW_WIDTH]>) -> Self {
        SeqMatrix { rows }
    }

    pub fn padded_len(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[u8; ROW_WIDTH]] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[u8; ROW_WIDTH] {
        &self.rows[i]
    }

    pub fn type_code(&self, i: usize) -> u8 {
        self.rows[i][0]
    }

    pub fn level(&self, i: usize, slot: usize) -> u8 {
        self.rows[i][1 + slot]
    }

    /// Number of rows up to and including the first EOS (the whole matrix
    /// when no EOS is present).
    pub fn content_len(&self) -> usize {
        self.rows
            .iter()
            .position(|r| r[0] == CommandType::Eos.code())
            .map(|i| i + 1)
            .unwrap_or(self.rows.len())
    }

    pub fn write_gcsq(&self, w: &mut impl Write) -> Result<(), LangError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows.len() as u32).to_le_bytes())?;
        w.write_all(&(ROW_WIDTH as u32).to_le_bytes())?;
        for row in &self.rows {
            w.write_all(row)?;
        }
        Ok(())
    }

    pub fn read_gcsq(r: &mut impl Read) -> Result<Self, LangError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LangError::BadMagic { expected: "GCSQ1" });
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let rows = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let cols = u32::from_le_bytes(b4) as usize;
        if cols != ROW_WIDTH {
            return Err(LangError::Io(format!("GCSQ1 column count {cols}, expected {ROW_WIDTH}")));
        }
        let mut out = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut row = [0u8; ROW_WIDTH];
            r.read_exact(&mut row)?;
            out.push(row);
        }
        Ok(SeqMatrix { rows: out })
    }
}

fn eos_row() -> [u8; ROW_WIDTH] {
    let mut row = [MASK_LEVEL; ROW_WIDTH];
    row[0] = CommandType::Eos.code();
    row
}

/// Quantize and pad a sequence into its N x 17 matrix. The program is
/// terminated by one EOS and padded with EOS rows; a program longer than its
/// padded length is a `SequenceOverflow` error.
pub fn encode_sequence(seq: &CadSequence) -> Result<SeqMatrix, LangError> {
    // A missing terminator is supplied; a present one is kept as-is.
    let needs_eos = seq.commands.last().map(|c| c.ty() != CommandType::Eos).unwrap_or(true);
    let len = seq.commands.len() + usize::from(needs_eos);
    if len > seq.padded_len {
        return Err(LangError::SequenceOverflow { len: seq.commands.len(), padded: seq.padded_len });
    }
    let mut rows = Vec::with_capacity(seq.padded_len);
    for cmd in &seq.commands {
        let q = QuantizedCommand::from_command(cmd)?;
        let mut row = [0u8; ROW_WIDTH];
        row[0] = q.type_code;
        row[1..].copy_from_slice(&q.levels);
        rows.push(row);
    }
    while rows.len() < seq.padded_len {
        rows.push(eos_row());
    }
    Ok(SeqMatrix { rows })
}

/// Inverse of [`encode_sequence`]: truncate at the first EOS, dequantize
/// active slots, restore the mask sentinel elsewhere.
pub fn decode_sequence(mat: &SeqMatrix) -> Result<CadSequence, LangError> {
    let mut commands = Vec::new();
    for row in mat.rows() {
        let ty = CommandType::from_code(row[0])?;
        if ty == CommandType::Eos {
            commands.push(CadCommand::eos());
            break;
        }
        let mut levels = [0u8; PARAM_SLOTS];
        levels.copy_from_slice(&row[1..]);
        let mut mask = [true; PARAM_SLOTS];
        for slot in ty.layout().active_slots() {
            mask[slot] = false;
        }
        let q = QuantizedCommand { type_code: row[0], levels, mask };
        commands.push(q.to_command()?);
    }
    // An all-EOS matrix is the empty program: drop the terminator so the
    // command list mirrors what was encoded.
    if commands.len() == 1 && commands[0].ty() == CommandType::Eos {
        commands.clear();
    }
    Ok(CadSequence::with_padded_len(commands, mat.padded_len()))
}
