//! Reconstruction metrics: command accuracy, parameter accuracy and the
//! invalid ratio.

use super::MetricError;
use crate::geom::{execute, is_valid};
use crate::lang::{validate, CadSequence, CommandType, SeqMatrix};

/// Mean per-position command-type accuracy over aligned padded sequences.
pub fn cmd_accuracy(pred: &[SeqMatrix], truth: &[SeqMatrix]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty("sequence set"));
    }
    let mut total = 0.0f64;
    for (p, t) in pred.iter().zip(truth) {
        if p.padded_len() != t.padded_len() {
            return Err(MetricError::LengthMismatch(p.padded_len(), t.padded_len()));
        }
        let n = t.padded_len();
        let hits = (0..n).filter(|&i| p.type_code(i) == t.type_code(i)).count();
        total += hits as f64 / n as f64;
    }
    Ok(total / pred.len() as f64)
}

/// Mean parameter accuracy: among positions whose type matched, the fraction
/// of active-slot levels within a strict tolerance of `eta` levels.
/// Sequences with no comparable slots count as fully accurate.
pub fn param_accuracy(pred: &[SeqMatrix], truth: &[SeqMatrix], eta: u8) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty("sequence set"));
    }
    let mut total = 0.0f64;
    for (p, t) in pred.iter().zip(truth) {
        if p.padded_len() != t.padded_len() {
            return Err(MetricError::LengthMismatch(p.padded_len(), t.padded_len()));
        }
        let mut num = 0usize;
        let mut den = 0usize;
        for i in 0..t.padded_len() {
            if p.type_code(i) != t.type_code(i) {
                continue;
            }
            let ty = match CommandType::from_code(t.type_code(i)) {
                Ok(ty) => ty,
                Err(_) => continue,
            };
            for slot in ty.layout().active_slots() {
                den += 1;
                let diff = (p.level(i, slot) as i16 - t.level(i, slot) as i16).abs();
                if diff < eta as i16 {
                    num += 1;
                }
            }
        }
        total += if den == 0 { 1.0 } else { num as f64 / den as f64 };
    }
    Ok(total / pred.len() as f64)
}

/// Fraction of sequences that fail grammar validation or do not build a
/// non-empty solid.
pub fn invalid_ratio(seqs: &[CadSequence], resolution: usize) -> Result<f64, MetricError> {
    if seqs.is_empty() {
        return Err(MetricError::Empty("sequence set"));
    }
    let invalid = seqs
        .iter()
        .filter(|s| {
            if !validate(s).is_ok() {
                return true;
            }
            match execute(s) {
                Ok(solid) => !is_valid(&solid, resolution),
                Err(_) => true,
            }
        })
        .count();
    Ok(invalid as f64 / seqs.len() as f64)
}
