//! A deterministic virtual liquid-handling platform driven by a conditional
//! dialect of XDL.
//!
//! The crate is organised bottom-up: [`ast`] and [`parser`] define the
//! document model, [`condition`] evaluates boolean measurement logic,
//! [`platform`] simulates vessels, transfers and a colour camera, [`runtime`]
//! executes documents against a platform, and [`turing`] compiles abstract
//! Turing machines into XDL blueprints plus an independent reference
//! interpreter to validate them. [`render`] turns execution traces into
//! human-readable tape diagrams.

pub mod ast;
pub mod condition;
pub mod parser;
pub mod platform;
pub mod render;
pub mod runtime;
pub mod trace;
pub mod turing;

pub use ast::{Blueprint, ConditionExpr, Step, XdlDocument};
pub use condition::{MeasuredValue, VariableStore};
pub use parser::{parse_condition, parse_document, ParseDiagnostic, Severity};
pub use platform::{ColourClass, LiquidSample, Platform, Vessel, VesselRole, Volume};
pub use runtime::{check, run, ExecutionConfig, RunOutcome};
pub use trace::{Trace, TraceEvent};
pub use turing::{compile_tm, decode_tape, load_configuration, TmConfiguration, TmSpec};
