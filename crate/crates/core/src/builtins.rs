//! Bundled example domains. Currently one: `move-goto`, the corridor robot
//! with a noisy move and sonar at the low level abstracted to three regions
//! and a deterministic goto at the high level.

use crate::lang::{Program, Trace};
use crate::model::GroundBat;
use crate::parser::{
    parse_mapping, parse_program, parse_theory, parse_trace, MappingFile, ParseError,
    SymbolTable,
};

pub const MOVE_THEORY: &str = include_str!("../assets/move.dsg");
pub const GOTO_THEORY: &str = include_str!("../assets/goto.dsg");
pub const MOVE_GOTO_MAPPING: &str = include_str!("../assets/move-goto.map");

/// High-level reference program: get to `near` if not already there, then
/// head to `far`.
pub const DELTA_H: &str = "if !At(near) then goto(near) fi; goto(far)";

/// Low-level reference program: the refinement of [`DELTA_H`] written out
/// by hand.
pub const DELTA_L: &str = "\
sonar(); \
while !K(exists x: position ((Loc(x) & (x <= 2)))) do move(-1); sonar() done; \
while !K(exists x: position ((Loc(x) & (x > 5)))) do move(1); sonar() done";

/// A hand-picked low-level run of [`DELTA_L`]: walk down to position 1
/// (confirming with the sonar), then up to position 7, with one sonar
/// reading off by one along the way.
pub const REFERENCE_TRACE: &str = "\
sonar(3), move(-1, 0), sonar(3), move(-1, -1), sonar(2), move(-1, -1), sonar(1), \
move(1, 1), sonar(3), move(1, 1), sonar(2), move(1, 1), sonar(4), move(1, 1), sonar(6)";

/// A complete example: two compiled theories, the refinement mapping
/// between them, reference programs on both levels, and a reference trace.
pub struct ExampleBundle {
    pub name: &'static str,
    pub low: GroundBat,
    pub high: GroundBat,
    pub low_table: SymbolTable,
    pub high_table: SymbolTable,
    pub mapping: MappingFile,
    pub delta_h: Program,
    pub delta_l: Program,
    pub reference_trace: Trace,
    pub low_text: &'static str,
    pub high_text: &'static str,
    pub mapping_text: &'static str,
}

/// Names of all bundled examples.
pub fn builtin_names() -> Vec<&'static str> {
    vec!["move-goto"]
}

/// Load a bundled example by name.
pub fn builtin(name: &str) -> Option<ExampleBundle> {
    match name {
        "move-goto" => Some(move_goto()),
        _ => None,
    }
}

fn must<T>(r: Result<T, ParseError>, what: &str) -> T {
    match r {
        Ok(v) => v,
        Err(e) => panic!("bundled {what} is malformed: {e}"),
    }
}

fn move_goto() -> ExampleBundle {
    let low_th = must(parse_theory(MOVE_THEORY), "low-level theory");
    let high_th = must(parse_theory(GOTO_THEORY), "high-level theory");
    let low_table = SymbolTable::from_theory(&low_th);
    let high_table = SymbolTable::from_theory(&high_th);
    let mapping = must(
        parse_mapping(MOVE_GOTO_MAPPING, &high_table, &low_table),
        "mapping",
    );
    let delta_h = must(parse_program(DELTA_H, &high_table), "high-level program");
    let delta_l = must(parse_program(DELTA_L, &low_table), "low-level program");
    let reference_trace = must(parse_trace(REFERENCE_TRACE, &low_table), "reference trace");
    let low = GroundBat::compile(low_th).expect("bundled low-level theory must compile");
    let high = GroundBat::compile(high_th).expect("bundled high-level theory must compile");
    ExampleBundle {
        name: "move-goto",
        low,
        high,
        low_table,
        high_table,
        mapping,
        delta_h,
        delta_l,
        reference_trace,
        low_text: MOVE_THEORY,
        high_text: GOTO_THEORY,
        mapping_text: MOVE_GOTO_MAPPING,
    }
}
