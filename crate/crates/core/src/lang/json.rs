//! Canonical JSON form of a command sequence.
//!
//! ```text
//! {"padded_len":60,"commands":[
//!   {"type":"SOL"},
//!   {"type":"Line","params":{"x":1.0000000000000000e0,"y":0.0000000000000000e0}},
//!   ...]}
//! ```
//!
//! Continuous parameters are written with 17 significant digits (exact f64
//! round-trip), discrete parameters as bare integers, keys in slot order.
//! Parsing reports schema violations with their JSON path.

use std::fmt::Write as _;

use serde_json::Value;

use super::{
    CadCommand, CadSequence, CommandType, LangError, SlotKind, DEFAULT_PADDED_LEN, SLOT_KINDS,
    SLOT_NAMES,
};

/// Serialize to the canonical text. `from_json(to_json(s)) == s` exactly.
pub fn to_json(seq: &CadSequence) -> String {
    let mut out = String::new();
    let _ = write!(out, "{{\"padded_len\":{},\"commands\":[", seq.padded_len);
    for (i, cmd) in seq.commands.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{{\"type\":\"{}\"", cmd.ty().name());
        let layout = cmd.ty().layout();
        if layout.active_count() > 0 {
            out.push_str(",\"params\":{");
            let mut first = true;
            for slot in layout.active_slots() {
                if !first {
                    out.push(',');
                }
                first = false;
                let v = cmd.p(slot);
                match SLOT_KINDS[slot] {
                    SlotKind::Continuous { .. } => {
                        let _ = write!(out, "\"{}\":{:.16e}", SLOT_NAMES[slot], v);
                    }
                    SlotKind::Discrete { .. } => {
                        let _ = write!(out, "\"{}\":{}", SLOT_NAMES[slot], v as u8);
                    }
                }
            }
            out.push('}');
        }
        out.push('}');
    }
    out.push_str("]}");
    out
}

fn err(path: &str, msg: impl Into<String>) -> LangError {
    LangError::Parse { path: path.to_string(), msg: msg.into() }
}

/// Parse the canonical JSON form.
pub fn from_json(text: &str) -> Result<CadSequence, LangError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| err("$", format!("not valid JSON: {e}")))?;
    let obj = root.as_object().ok_or_else(|| err("$", "expected an object"))?;

    let padded_len = match obj.get("padded_len") {
        None => DEFAULT_PADDED_LEN,
        Some(v) => v
            .as_u64()
            .filter(|&n| n > 0)
            .ok_or_else(|| err("$.padded_len", "expected a positive integer"))?
            as usize,
    };

    let commands_val = obj
        .get("commands")
        .ok_or_else(|| err("$", "missing \"commands\" field"))?
        .as_array()
        .ok_or_else(|| err("$.commands", "expected an array"))?;

    let mut commands = Vec::with_capacity(commands_val.len());
    for (i, item) in commands_val.iter().enumerate() {
        let path = format!("$.commands[{i}]");
        let cmd_obj =
            item.as_object().ok_or_else(|| err(&path, "expected an object"))?;
        let ty_name = cmd_obj
            .get("type")
            .ok_or_else(|| err(&format!("{path}.type"), "missing \"type\" field"))?
            .as_str()
            .ok_or_else(|| err(&format!("{path}.type"), "expected a string"))?;
        let ty = CommandType::from_name(ty_name)
            .ok_or_else(|| err(&format!("{path}.type"), format!("unknown type {ty_name:?}")))?;

        let layout = ty.layout();
        let params = cmd_obj.get("params");
        if layout.active_count() == 0 {
            if params.is_some() {
                return Err(err(&format!("{path}.params"), "type takes no parameters"));
            }
            commands.push(match ty {
                CommandType::Sol => CadCommand::sol(),
                CommandType::Eos => CadCommand::eos(),
                _ => unreachable!(),
            });
            continue;
        }

        let params = params
            .ok_or_else(|| err(&format!("{path}.params"), "missing \"params\" field"))?
            .as_object()
            .ok_or_else(|| err(&format!("{path}.params"), "expected an object"))?;

        let mut values = [0.0f64; super::PARAM_SLOTS];
        for slot in layout.active_slots() {
            let name = SLOT_NAMES[slot];
            let ppath = format!("{path}.params.{name}");
            let v = params
                .get(name)
                .ok_or_else(|| err(&ppath, format!("missing parameter \"{name}\"")))?;
            match SLOT_KINDS[slot] {
                SlotKind::Continuous { .. } => {
                    values[slot] =
                        v.as_f64().ok_or_else(|| err(&ppath, "expected a number"))?;
                }
                SlotKind::Discrete { cardinality } => {
                    let code = v
                        .as_u64()
                        .ok_or_else(|| err(&ppath, "expected an integer code"))?;
                    if code >= cardinality as u64 {
                        return Err(err(
                            &ppath,
                            format!("code {code} out of range (cardinality {cardinality})"),
                        ));
                    }
                    values[slot] = code as f64;
                }
            }
        }
        for key in params.keys() {
            let known = layout.active_slots().any(|s| SLOT_NAMES[s] == key);
            if !known {
                return Err(err(
                    &format!("{path}.params.{key}"),
                    format!("parameter \"{key}\" is not part of the {} layout", ty.name()),
                ));
            }
        }

        commands.push(match ty {
            CommandType::Line => CadCommand::line(values[0], values[1]),
            CommandType::Arc => CadCommand::arc(
                values[0],
                values[1],
                values[2],
                super::ArcDirection::from_code(values[3] as u8)?,
            ),
            CommandType::Circle => CadCommand::circle(values[0], values[1], values[4]),
            CommandType::Extrude => CadCommand::extrude(
                values[5],
                values[6],
                values[7],
                [values[8], values[9], values[10]],
                values[11],
                values[12],
                values[13],
                super::BooleanOp::from_code(values[14] as u8)?,
                super::Sidedness::from_code(values[15] as u8)?,
            ),
            CommandType::Sol | CommandType::Eos => unreachable!(),
        });
    }

    Ok(CadSequence::with_padded_len(commands, padded_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{ArcDirection, BooleanOp, Sidedness};

    fn sample() -> CadSequence {
        CadSequence::new(vec![
            CadCommand::sol(),
            CadCommand::line(0.5, 0.0),
            CadCommand::arc(0.5, 0.25, 1.25, ArcDirection::Cw),
            CadCommand::line(0.0, 0.25),
            CadCommand::line(0.0, 0.0),
            CadCommand::extrude(
                0.1,
                -0.2,
                0.3,
                [0.05, -0.05, 0.2],
                1.0,
                0.4,
                0.1,
                BooleanOp::New,
                Sidedness::Two,
            ),
            CadCommand::eos(),
        ])
    }

    #[test]
    fn roundtrip_is_exact() {
        let seq = sample();
        let text = to_json(&seq);
        let back = from_json(&text).unwrap();
        assert_eq!(seq, back);
        // Serialization itself is canonical.
        assert_eq!(text, to_json(&back));
    }

    #[test]
    fn missing_type_is_reported_with_path() {
        let text = r#"{"commands":[{"params":{"x":0.0,"y":0.0}}]}"#;
        match from_json(text) {
            Err(LangError::Parse { path, .. }) => assert_eq!(path, "$.commands[0].type"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_param_is_reported_with_path() {
        let text = r#"{"commands":[{"type":"Line","params":{"x":0.0}}]}"#;
        match from_json(text) {
            Err(LangError::Parse { path, .. }) => assert_eq!(path, "$.commands[0].params.y"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_extra_param_is_rejected() {
        let text = r#"{"commands":[{"type":"Line","params":{"x":0.0,"y":0.0,"r":0.1}}]}"#;
        assert!(from_json(text).is_err());
    }

    #[test]
    fn padded_len_survives_roundtrip() {
        let mut seq = sample();
        seq.padded_len = 24;
        assert_eq!(from_json(&to_json(&seq)).unwrap().padded_len, 24);
    }
}
