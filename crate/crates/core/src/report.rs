//! Structured reports shared by the CLI: a versioned, serializable result
//! envelope that renders to stable JSON or human-readable text. Rationals
//! are always rendered as "p/q" strings, never floats; timing information
//! appears only in the text rendering so the structured output is
//! byte-identical for identical inputs.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use crate::lang::Rat;
use crate::parser::pretty::print_rat;

/// Version of the structured output schema.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    /// Echo of the subcommand that produced the report.
    pub command: String,
    /// Digests of the inputs (theories, programs, formulas) by role.
    pub inputs: BTreeMap<String, String>,
    /// Command-specific payload.
    pub result: Value,
    /// Some enumeration was cut by a bound; results hold only to the bound.
    pub truncated: bool,
}

/// A short, stable content digest (FNV-1a, 64-bit) used to tie a report to
/// its inputs without embedding them wholesale.
pub fn digest(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Render a rational as the stable "p/q" form used everywhere in reports.
pub fn rat_value(r: &Rat) -> Value {
    Value::String(print_rat(r))
}

impl Report {
    pub fn new(command: &str) -> Report {
        Report {
            schema: SCHEMA,
            command: command.to_string(),
            inputs: BTreeMap::new(),
            result: Value::Null,
            truncated: false,
        }
    }

    pub fn input(mut self, role: &str, text: &str) -> Report {
        self.inputs.insert(role.to_string(), digest(text));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Human-readable rendering; the only place timing is reported.
    pub fn to_text(&self, elapsed: Duration) -> String {
        let mut out = String::new();
        out.push_str(&format!("command: {}\n", self.command));
        render_value(&self.result, 0, &mut out);
        if self.truncated {
            out.push_str("note: enumeration was truncated by a bound\n");
        }
        out.push_str(&format!("elapsed: {:.3}s\n", elapsed.as_secs_f64()));
        out
    }
}

fn render_value(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                match val {
                    Value::Object(_) | Value::Array(_) => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        render_value(val, indent + 1, out);
                    }
                    _ => out.push_str(&format!("{pad}{k}: {}\n", scalar(val))),
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                match item {
                    Value::Object(_) | Value::Array(_) => {
                        out.push_str(&format!("{pad}-\n"));
                        render_value(item, indent + 1, out);
                    }
                    _ => out.push_str(&format!("{pad}- {}\n", scalar(item))),
                }
            }
        }
        Value::Null => {}
        other => out.push_str(&format!("{pad}{}\n", scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::rat;
    use serde_json::json;

    #[test]
    fn digests_are_stable_and_distinct() {
        assert_eq!(digest("abc"), digest("abc"));
        assert_ne!(digest("abc"), digest("abd"));
        assert_eq!(digest("abc").len(), 16);
    }

    #[test]
    fn rationals_render_as_fractions() {
        assert_eq!(rat_value(&rat(8, 11)), Value::String("8/11".into()));
    }

    #[test]
    fn json_is_deterministic_and_carries_schema() {
        let mk = || {
            let mut r = Report::new("eval").input("theory", "t");
            r.result = json!({"value": true, "degree": "8/11"});
            r
        };
        let a = mk().to_json();
        let b = mk().to_json();
        assert_eq!(a, b);
        assert!(a.contains("\"schema\": 1"));
        assert!(!a.contains("elapsed"));
    }

    #[test]
    fn text_rendering_includes_timing() {
        let mut r = Report::new("traces");
        r.result = json!({"count": 1, "traces": [["goto(near)"]]});
        let text = r.to_text(Duration::from_millis(1500));
        assert!(text.contains("elapsed: 1.500s"));
        assert!(text.contains("goto(near)"));
    }
}
