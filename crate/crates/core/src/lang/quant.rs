//! 8-bit quantization of continuous command parameters.

use super::{LangError, SlotKind, SLOT_KINDS};
use crate::scalar::Real;

/// Quantize `v` over the closed interval `[lo, hi]` into a level in 0..=255.
/// Values outside the interval clamp to it; rounding is half-away-from-zero
/// (`f64::round` semantics), fixed so golden files are bit-exact.
pub fn quantize<T: Real>(v: T, lo: f64, hi: f64) -> Result<u8, LangError> {
    if !(hi > lo) {
        return Err(LangError::EmptyRange(lo, hi));
    }
    let v = v.f64().clamp(lo, hi);
    let level = ((v - lo) / (hi - lo) * 255.0).round();
    Ok(level as u8)
}

/// Inverse of [`quantize`]: the level's representative value
/// `lo + level/255 * (hi - lo)`. Total over `u8`, so the level range needs
/// no runtime check.
pub fn dequantize<T: Real>(level: u8, lo: f64, hi: f64) -> Result<T, LangError> {
    if !(hi > lo) {
        return Err(LangError::EmptyRange(lo, hi));
    }
    Ok(T::of(lo + (level as f64 / 255.0) * (hi - lo)))
}

/// Quantize one slot: continuous slots go through the range table, discrete
/// slots keep their raw categorical code.
pub fn quantize_slot(slot: usize, v: f64) -> Result<u8, LangError> {
    match SLOT_KINDS[slot] {
        SlotKind::Continuous { lo, hi } => quantize(v, lo, hi),
        SlotKind::Discrete { cardinality } => {
            let code = v as u8;
            if v.fract() != 0.0 || v < 0.0 || code >= cardinality {
                return Err(LangError::InvalidDiscrete { slot, code, cardinality });
            }
            Ok(code)
        }
    }
}

/// Dequantize one slot; discrete slots pass their code through after a
/// cardinality check.
pub fn dequantize_slot(slot: usize, level: u8) -> Result<f64, LangError> {
    match SLOT_KINDS[slot] {
        SlotKind::Continuous { lo, hi } => dequantize(level, lo, hi),
        SlotKind::Discrete { cardinality } => {
            if level >= cardinality {
                return Err(LangError::InvalidDiscrete { slot, code: level, cardinality });
            }
            Ok(level as f64)
        }
    }
}
