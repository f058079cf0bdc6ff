//! Canonical JSON rendering.
//!
//! Object keys are sorted bytewise, id-keyed collections are emitted as
//! arrays in id order (see [`crate::model`]), floats carry at most nine
//! significant digits in shortest round-trip form, and the output is
//! UTF-8 with two-space indentation, LF line endings and a trailing newline.
//! The writer sorts keys itself, so the result does not depend on how
//! `serde_json` was compiled.

use serde::Serialize;
use serde_json::{Number, Value};

use crate::geometry::quantize;
use crate::model::Project;

/// Canonical bytes of the replicated document. Replica bookkeeping
/// (tombstones, parked ops) is not included.
pub fn canonical_bytes(doc: &Project) -> Vec<u8> {
    to_canonical_string(doc).into_bytes()
}

pub fn to_canonical_string<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("document types always serialize");
    render(&value)
}

/// Renders an arbitrary JSON value canonically.
pub fn render(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, value: &Value, depth: usize) {
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => {
            out.push_str(&serde_json::to_string(value).expect("scalar"));
        }
        Value::Number(n) => out.push_str(&format_number(n)),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, depth + 1);
                write_value(out, item, depth + 1);
            }
            newline(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, depth + 1);
                out.push_str(&serde_json::to_string(key).expect("key"));
                out.push_str(": ");
                write_value(out, item, depth + 1);
            }
            newline(out, depth);
            out.push('}');
        }
    }
}

fn newline(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn format_number(n: &Number) -> String {
    match n.as_f64() {
        Some(f) if n.is_f64() => match Number::from_f64(quantize(f)) {
            Some(q) => q.to_string(),
            None => "null".to_owned(),
        },
        _ => n.to_string(),
    }
}
