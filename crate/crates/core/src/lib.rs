//! Exact interpreter and abstraction verifier for noisy Golog programs over
//! finite-domain basic action theories.
//!
//! The crate is organized bottom-up:
//!
//! * [`lang`] — term/formula/program ASTs, substitution, sugar expansion;
//! * [`parser`] — the `.dsg` DSL and canonical pretty-printer;
//! * [`model`] — ground semantic engine (worlds, progression, likelihood);
//! * [`belief`] — distributions, compatible states, normalization, truth;
//! * [`interpreter`] — program transition semantics and trace enumeration;
//! * [`abstraction`] — refinement mappings and bisimulation checking;
//! * [`builtins`] — the bundled move/goto example domain;
//! * [`report`] — structured output shared by the CLI.

pub mod abstraction;
pub mod belief;
pub mod builtins;
pub mod interpreter;
pub mod lang;
pub mod model;
pub mod parser;
pub mod report;
