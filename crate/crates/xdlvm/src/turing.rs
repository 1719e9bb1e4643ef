//! Turing machines: an independent reference interpreter, a compiler that
//! lowers a machine into a blueprint document, and codecs between machine
//! configurations and vessel layouts.
//!
//! The reference interpreter ([`oracle_step`], [`oracle_run`]) works on
//! plain data and never touches a platform; it is the ground truth that
//! compiled documents are checked against. The compiler ([`compile_tm`])
//! emits a document for the standard deck: one vial per tape cell, a
//! parallel head-marker row, and two state vials holding a colour-pair
//! encoding of the current state.

use crate::ast::{Blueprint, ConditionExpr, Step, XdlDocument};
use crate::condition::VariableStore;
use crate::platform::{
    standard_platform, ColourClass, Platform, PlatformError, VesselRole, VesselSnapshot, Volume,
};
use crate::runtime::{run, ExecutionConfig, RunOutcome, RuntimeError};
use crate::trace::Trace;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Colour order used by the two-vial state encoding.
const ENCODING_ORDER: [ColourClass; 4] = [
    ColourClass::White,
    ColourClass::Orange,
    ColourClass::Blue,
    ColourClass::Green,
];

/// Most non-halt states a machine may declare: the colour-pair space has
/// sixteen points and (green, green) is reserved for the halt state.
pub const MAX_STATES: usize = 15;

/// Most symbols an alphabet may declare, one per usable colour.
pub const MAX_SYMBOLS: usize = 4;

/// Dose moved by every compiled transfer, matching the standard vial fill.
const DOSE_ML: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    L,
    R,
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Move::L => write!(f, "L"),
            Move::R => write!(f, "R"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphabetSymbol {
    pub symbol: String,
    pub colour: ColourClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmRule {
    pub state: String,
    pub read: String,
    pub write: String,
    #[serde(rename = "move")]
    pub direction: Move,
    pub next: String,
}

/// A complete machine description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmSpec {
    pub states: Vec<String>,
    pub halt: String,
    pub alphabet: Vec<AlphabetSymbol>,
    pub blank: String,
    pub rules: Vec<TmRule>,
    pub initial_state: String,
    pub initial_head: usize,
}

/// A machine configuration: tape contents, 1-based head position, state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TmConfiguration {
    pub state: String,
    pub head: usize,
    pub tape: Vec<String>,
}

impl TmConfiguration {
    /// The tape as one string: concatenated when every symbol is a single
    /// character, space-separated otherwise.
    pub fn tape_string(&self) -> String {
        if self.tape.iter().all(|s| s.chars().count() == 1) {
            self.tape.concat()
        } else {
            self.tape.join(" ")
        }
    }
}

impl fmt::Display for TmConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "state={} head={} tape={}",
            self.state,
            self.head,
            self.tape_string()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TmError {
    #[error("{found} states declared but only {MAX_STATES} non-halt states are encodable")]
    EncodingOverflow { found: usize },
    #[error("{found} symbols declared but only {MAX_SYMBOLS} colours are usable")]
    AlphabetOverflow { found: usize },
    #[error("invalid machine description: {0}")]
    Validation(String),
    #[error("no rule for state {state:?} reading {symbol:?}")]
    NoRule { state: String, symbol: String },
    #[error("head at cell {position} cannot move {direction} on a {tape_len}-cell tape")]
    TapeBounds {
        position: usize,
        direction: Move,
        tape_len: usize,
    },
    #[error("{count} head vials are marked, expected exactly one")]
    HeadAmbiguous { count: usize },
    #[error("state vials read ({0}, {1}), which does not decode to a state")]
    UndecodableState(ColourClass, ColourClass),
    #[error("vessel {vessel:?} reads {colour}, which is not an alphabet colour")]
    UnknownColour { vessel: String, colour: ColourClass },
    #[error("machine layout problem: {0}")]
    Layout(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("compiled document failed: {0}")]
    CompiledRun(String),
}

fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl TmSpec {
    pub fn validate(&self) -> Result<(), TmError> {
        if self.states.len() > MAX_STATES {
            return Err(TmError::EncodingOverflow {
                found: self.states.len(),
            });
        }
        if self.alphabet.is_empty() {
            return Err(TmError::Validation("alphabet is empty".to_string()));
        }
        if self.alphabet.len() > MAX_SYMBOLS {
            return Err(TmError::AlphabetOverflow {
                found: self.alphabet.len(),
            });
        }
        if !is_identifier(&self.halt) {
            return Err(TmError::Validation(format!(
                "halt state {:?} is not an identifier",
                self.halt
            )));
        }
        let mut seen_states = BTreeSet::new();
        for state in &self.states {
            if !is_identifier(state) {
                return Err(TmError::Validation(format!(
                    "state {state:?} is not an identifier"
                )));
            }
            if state == &self.halt {
                return Err(TmError::Validation(format!(
                    "halt state {state:?} must not appear in the state list"
                )));
            }
            if !seen_states.insert(state) {
                return Err(TmError::Validation(format!("duplicate state {state:?}")));
            }
        }
        let mut seen_symbols = BTreeSet::new();
        let mut seen_colours = BTreeSet::new();
        for entry in &self.alphabet {
            if entry.symbol.is_empty() {
                return Err(TmError::Validation("empty alphabet symbol".to_string()));
            }
            if entry.colour == ColourClass::Unknown {
                return Err(TmError::Validation(format!(
                    "symbol {:?} cannot map to the unknown class",
                    entry.symbol
                )));
            }
            if !seen_symbols.insert(&entry.symbol) {
                return Err(TmError::Validation(format!(
                    "duplicate symbol {:?}",
                    entry.symbol
                )));
            }
            if !seen_colours.insert(entry.colour) {
                return Err(TmError::Validation(format!(
                    "two symbols map to {}",
                    entry.colour
                )));
            }
        }
        match self.symbol_colour(&self.blank) {
            None => {
                return Err(TmError::Validation(format!(
                    "blank symbol {:?} is not in the alphabet",
                    self.blank
                )))
            }
            Some(ColourClass::White) => {}
            Some(other) => {
                return Err(TmError::Validation(format!(
                    "blank symbol {:?} must map to white, not {other}",
                    self.blank
                )))
            }
        }
        let mut seen_rules = BTreeSet::new();
        for rule in &self.rules {
            if rule.state == self.halt {
                return Err(TmError::Validation(format!(
                    "rule declared for the halt state reading {:?}",
                    rule.read
                )));
            }
            if !self.states.contains(&rule.state) {
                return Err(TmError::Validation(format!(
                    "rule references undeclared state {:?}",
                    rule.state
                )));
            }
            for symbol in [&rule.read, &rule.write] {
                if self.symbol_colour(symbol).is_none() {
                    return Err(TmError::Validation(format!(
                        "rule references undeclared symbol {symbol:?}"
                    )));
                }
            }
            if rule.next != self.halt && !self.states.contains(&rule.next) {
                return Err(TmError::Validation(format!(
                    "rule switches to undeclared state {:?}",
                    rule.next
                )));
            }
            if !seen_rules.insert((&rule.state, &rule.read)) {
                return Err(TmError::Validation(format!(
                    "two rules cover state {:?} reading {:?}",
                    rule.state, rule.read
                )));
            }
        }
        if self.initial_state != self.halt && !self.states.contains(&self.initial_state) {
            return Err(TmError::Validation(format!(
                "initial state {:?} is not declared",
                self.initial_state
            )));
        }
        if self.initial_head == 0 {
            return Err(TmError::Validation(
                "head positions are 1-based; 0 is not a cell".to_string(),
            ));
        }
        Ok(())
    }

    pub fn symbol_colour(&self, symbol: &str) -> Option<ColourClass> {
        self.alphabet
            .iter()
            .find(|e| e.symbol == symbol)
            .map(|e| e.colour)
    }

    pub fn colour_symbol(&self, colour: ColourClass) -> Option<&str> {
        self.alphabet
            .iter()
            .find(|e| e.colour == colour)
            .map(|e| e.symbol.as_str())
    }

    pub fn rule_for(&self, state: &str, symbol: &str) -> Option<&TmRule> {
        self.rules
            .iter()
            .find(|r| r.state == state && r.read == symbol)
    }

    /// Initial configuration on a blank tape of the given length.
    pub fn blank_configuration(&self, tape_len: usize) -> TmConfiguration {
        TmConfiguration {
            state: self.initial_state.clone(),
            head: self.initial_head,
            tape: vec![self.blank.clone(); tape_len],
        }
    }
}

/// Parses and validates a machine description from JSON.
pub fn tm_spec_from_json(text: &str) -> Result<TmSpec, TmError> {
    let spec: TmSpec =
        serde_json::from_str(text).map_err(|e| TmError::Validation(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn tm_spec_to_json(spec: &TmSpec) -> String {
    let mut text = serde_json::to_string_pretty(spec).expect("spec serialises");
    text.push('\n');
    text
}

/// Maps a state name to its colour pair. Non-halt states take pairs in
/// declaration order, pairs ordered white < orange < blue < green on each
/// vial; the halt state is always (green, green).
pub fn encode_state(spec: &TmSpec, state: &str) -> Result<(ColourClass, ColourClass), TmError> {
    if state == spec.halt {
        return Ok((ColourClass::Green, ColourClass::Green));
    }
    let index = spec
        .states
        .iter()
        .position(|s| s == state)
        .ok_or_else(|| TmError::Validation(format!("state {state:?} is not declared")))?;
    if index >= MAX_STATES {
        return Err(TmError::EncodingOverflow {
            found: spec.states.len(),
        });
    }
    Ok((ENCODING_ORDER[index / 4], ENCODING_ORDER[index % 4]))
}

/// Inverse of [`encode_state`].
pub fn decode_state_pair(
    spec: &TmSpec,
    pair: (ColourClass, ColourClass),
) -> Result<String, TmError> {
    if pair == (ColourClass::Green, ColourClass::Green) {
        return Ok(spec.halt.clone());
    }
    let position = |c: ColourClass| ENCODING_ORDER.iter().position(|&o| o == c);
    let (a, b) = match (position(pair.0), position(pair.1)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(TmError::UndecodableState(pair.0, pair.1)),
    };
    let index = a * 4 + b;
    spec.states
        .get(index)
        .cloned()
        .ok_or(TmError::UndecodableState(pair.0, pair.1))
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleStep {
    Halted,
    Next(TmConfiguration),
}

/// Applies one transition of the reference interpreter.
pub fn oracle_step(spec: &TmSpec, config: &TmConfiguration) -> Result<OracleStep, TmError> {
    if config.state == spec.halt {
        return Ok(OracleStep::Halted);
    }
    let tape_len = config.tape.len();
    if config.head == 0 || config.head > tape_len {
        return Err(TmError::Layout(format!(
            "head position {} is outside the {tape_len}-cell tape",
            config.head
        )));
    }
    let symbol = &config.tape[config.head - 1];
    if spec.symbol_colour(symbol).is_none() {
        return Err(TmError::Validation(format!(
            "tape holds undeclared symbol {symbol:?}"
        )));
    }
    let rule = spec
        .rule_for(&config.state, symbol)
        .ok_or_else(|| TmError::NoRule {
            state: config.state.clone(),
            symbol: symbol.clone(),
        })?;
    let mut tape = config.tape.clone();
    tape[config.head - 1] = rule.write.clone();
    let head = match rule.direction {
        Move::L => {
            if config.head == 1 {
                return Err(TmError::TapeBounds {
                    position: config.head,
                    direction: Move::L,
                    tape_len,
                });
            }
            config.head - 1
        }
        Move::R => {
            if config.head == tape_len {
                return Err(TmError::TapeBounds {
                    position: config.head,
                    direction: Move::R,
                    tape_len,
                });
            }
            config.head + 1
        }
    };
    Ok(OracleStep::Next(TmConfiguration {
        state: rule.next.clone(),
        head,
        tape,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleEnd {
    Halted,
    CapReached,
    Failed(TmError),
}

/// Runs the reference interpreter, returning every configuration visited
/// (the initial one first) and how the run ended.
pub fn oracle_trace(
    spec: &TmSpec,
    initial: &TmConfiguration,
    max_transitions: u64,
) -> (Vec<TmConfiguration>, OracleEnd) {
    let mut configs = vec![initial.clone()];
    loop {
        let current = configs.last().expect("at least the initial configuration");
        if current.state == spec.halt {
            return (configs, OracleEnd::Halted);
        }
        if configs.len() as u64 > max_transitions {
            return (configs, OracleEnd::CapReached);
        }
        match oracle_step(spec, current) {
            Ok(OracleStep::Next(next)) => configs.push(next),
            Ok(OracleStep::Halted) => return (configs, OracleEnd::Halted),
            Err(e) => return (configs, OracleEnd::Failed(e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub final_config: TmConfiguration,
    pub transitions: u64,
    pub halted: bool,
}

/// Runs the reference interpreter to halt, cap, or error.
pub fn oracle_run(
    spec: &TmSpec,
    initial: &TmConfiguration,
    max_transitions: u64,
) -> Result<OracleOutcome, TmError> {
    let (configs, end) = oracle_trace(spec, initial, max_transitions);
    match end {
        OracleEnd::Failed(e) => Err(e),
        OracleEnd::Halted | OracleEnd::CapReached => Ok(OracleOutcome {
            transitions: (configs.len() - 1) as u64,
            final_config: configs.into_iter().last().expect("non-empty"),
            halted: matches!(end, OracleEnd::Halted),
        }),
    }
}

fn var(name: impl Into<String>) -> ConditionExpr {
    ConditionExpr::Var(name.into())
}

fn or_all(mut exprs: Vec<ConditionExpr>) -> ConditionExpr {
    let first = exprs.remove(0);
    exprs.into_iter().fold(first, ConditionExpr::or)
}

fn measure_colour(step_id: &str, target: &str, comparison: &str, true_if: &str) -> Step {
    Step::new("Measure")
        .with_attr("step_id", step_id)
        .with_attr("target", target)
        .with_attr("quantity", "colour")
        .with_attr("comparison_value", comparison)
        .with_attr("true_if", true_if)
}

/// Emits the pair of complementary measurements that materialise a boolean
/// expression as a store variable: exactly one of the two fires, binding
/// `step_id` to the truth of `expr`. Both read the orange stock, whose
/// colour is constant, so `equal` fires true and `not_equal` fires false.
fn bind_bool(step_id: &str, expr: ConditionExpr) -> [Step; 2] {
    [
        measure_colour(step_id, "stock_orange", "orange", "equal").with_condition(expr.clone()),
        measure_colour(step_id, "stock_orange", "orange", "not_equal")
            .with_condition(ConditionExpr::not(expr)),
    ]
}

fn transfer_step(from: &str, to: &str) -> Step {
    Step::new("Transfer")
        .with_attr("from", from)
        .with_attr("to", to)
        .with_attr("volume", &format!("{DOSE_ML} mL"))
}

fn colour_letter(colour: ColourClass) -> char {
    colour.letter()
}

fn state_var(spec: &TmSpec, state: &str) -> String {
    if state == spec.halt {
        "HALT".to_string()
    } else {
        format!("S_{state}")
    }
}

fn read_var(symbol_index: usize) -> String {
    format!("R_s{symbol_index}")
}

fn tape_var(cell: u32, symbol_index: usize) -> String {
    format!("T{cell}_s{symbol_index}")
}

fn head_var(cell: u32) -> String {
    format!("H{cell}")
}

fn rule_var(rule: &TmRule, symbol_index: usize) -> String {
    format!("C_{}_s{}", rule.state, symbol_index)
}

fn build_read_state(spec: &TmSpec) -> Result<Blueprint, TmError> {
    let mut steps = Vec::new();
    for j in 1..=2u32 {
        for colour in ENCODING_ORDER {
            steps.push(measure_colour(
                &format!("SV{j}{}", colour_letter(colour)),
                &format!("state_{j}"),
                colour.name(),
                "equal",
            ));
        }
    }
    let mut names: Vec<&str> = spec.states.iter().map(String::as_str).collect();
    names.push(&spec.halt);
    for state in names {
        let (c1, c2) = encode_state(spec, state)?;
        let expr = ConditionExpr::and(
            var(format!("SV1{}", colour_letter(c1))),
            var(format!("SV2{}", colour_letter(c2))),
        );
        steps.extend(bind_bool(&state_var(spec, state), expr));
    }
    Ok(Blueprint {
        id: "ReadState".to_string(),
        params: Vec::new(),
        steps,
        pos: None,
    })
}

fn build_read_tape(spec: &TmSpec, tape_len: u32) -> Blueprint {
    let mut steps = Vec::new();
    for i in 1..=tape_len {
        steps.push(measure_colour(
            &head_var(i),
            &format!("head_{i}"),
            "orange",
            "equal",
        ));
    }
    for i in 1..=tape_len {
        for (k, entry) in spec.alphabet.iter().enumerate() {
            steps.push(measure_colour(
                &tape_var(i, k),
                &format!("tape_{i}"),
                entry.colour.name(),
                "equal",
            ));
        }
    }
    for (k, _) in spec.alphabet.iter().enumerate() {
        let terms = (1..=tape_len)
            .map(|i| ConditionExpr::and(var(head_var(i)), var(tape_var(i, k))))
            .collect();
        steps.extend(bind_bool(&read_var(k), or_all(terms)));
    }
    Blueprint {
        id: "ReadTape".to_string(),
        params: Vec::new(),
        steps,
        pos: None,
    }
}

fn symbol_index(spec: &TmSpec, symbol: &str) -> usize {
    spec.alphabet
        .iter()
        .position(|e| e.symbol == symbol)
        .expect("validated symbol")
}

fn build_lookup_table(spec: &TmSpec, tape_len: u32) -> Result<Blueprint, TmError> {
    let mut steps = Vec::new();
    let blank_index = symbol_index(spec, &spec.blank);

    let mut rule_vars = Vec::new();
    for rule in &spec.rules {
        let read_index = symbol_index(spec, &rule.read);
        let cvar = rule_var(rule, read_index);
        let expr = ConditionExpr::and(
            var(state_var(spec, &rule.state)),
            var(read_var(read_index)),
        );
        steps.extend(bind_bool(&cvar, expr));
        rule_vars.push(cvar);
    }

    // No rule matched and the machine has not halted: flag the error so
    // the outer loop exits. Rule actions below may re-bind ERROR for
    // boundary moves; the latest binding wins.
    let none_matched = if rule_vars.is_empty() {
        ConditionExpr::Literal(false)
    } else {
        or_all(rule_vars.iter().cloned().map(var).collect())
    };
    steps.extend(bind_bool(
        "ERROR",
        ConditionExpr::and(
            ConditionExpr::not(none_matched),
            ConditionExpr::not(var("HALT")),
        ),
    ));

    for rule in &spec.rules {
        let read_index = symbol_index(spec, &rule.read);
        let cvar = rule_var(rule, read_index);
        let write_colour = spec
            .symbol_colour(&rule.write)
            .ok_or_else(|| TmError::Validation(format!("undeclared symbol {:?}", rule.write)))?;

        for i in 1..=tape_len {
            let here = ConditionExpr::and(var(cvar.clone()), var(head_var(i)));
            // Empty the cell unless it already holds the blank; a blank
            // cell is an empty vial with nothing to pour away.
            steps.push(
                transfer_step(&format!("tape_{i}"), "waste").with_condition(ConditionExpr::and(
                    here.clone(),
                    ConditionExpr::not(var(tape_var(i, blank_index))),
                )),
            );
            if write_colour != ColourClass::White {
                steps.push(
                    transfer_step(
                        &format!("stock_{}", write_colour.name()),
                        &format!("tape_{i}"),
                    )
                    .with_condition(here),
                );
            }
        }

        for i in 1..=tape_len {
            let here = ConditionExpr::and(var(cvar.clone()), var(head_var(i)));
            let target = match rule.direction {
                Move::L => i.checked_sub(1).filter(|t| *t >= 1),
                Move::R => Some(i + 1).filter(|t| *t <= tape_len),
            };
            match target {
                Some(t) => {
                    steps.push(
                        transfer_step(&format!("head_{i}"), "waste").with_condition(here.clone()),
                    );
                    steps.push(
                        transfer_step("stock_orange", &format!("head_{t}")).with_condition(here),
                    );
                }
                None => {
                    // Moving off the tape: leave the head in place and
                    // raise the error flag instead.
                    steps.push(
                        measure_colour("ERROR", "stock_orange", "orange", "equal")
                            .with_condition(here),
                    );
                }
            }
        }

        let from_pair = encode_state(spec, &rule.state)?;
        let to_pair = encode_state(spec, &rule.next)?;
        for (j, (from, to)) in [(1u32, (from_pair.0, to_pair.0)), (2, (from_pair.1, to_pair.1))]
        {
            if from != ColourClass::White {
                steps.push(
                    transfer_step(&format!("state_{j}"), "waste")
                        .with_condition(var(cvar.clone())),
                );
            }
            if to != ColourClass::White {
                steps.push(
                    transfer_step(&format!("stock_{}", to.name()), &format!("state_{j}"))
                        .with_condition(var(cvar.clone())),
                );
            }
        }
    }

    Ok(Blueprint {
        id: "LookUpTable".to_string(),
        params: Vec::new(),
        steps,
        pos: None,
    })
}

/// Compiles a machine into a blueprint document for the standard deck
/// with `tape_len` tape cells.
///
/// The emitted document reads the whole deck through measurements on
/// every iteration, consults the rule table through compiled conditions,
/// and performs each action as conditional transfers. The main loop exits
/// when the halt pair is read or when no rule matches (or a move would
/// leave the tape), which raises the ERROR flag.
pub fn compile_tm(spec: &TmSpec, tape_len: u32) -> Result<XdlDocument, TmError> {
    spec.validate()?;
    if tape_len == 0 {
        return Err(TmError::Layout("tape must have at least one cell".to_string()));
    }

    let read_state = build_read_state(spec)?;
    let read_tape = build_read_tape(spec, tape_len);
    let lookup = build_lookup_table(spec, tape_len)?;

    let transition = Blueprint {
        id: "Transition".to_string(),
        params: Vec::new(),
        steps: vec![
            Step::new("ResetVariables"),
            Step::new("ReadState"),
            Step::new("ReadTape"),
            Step::new("LookUpTable"),
        ],
        pos: None,
    };

    // The loop condition must be defined before its first evaluation, so
    // the machine blueprint derives HALT once up front (the deck may
    // already hold the halt pair) and clears ERROR.
    let mut machine_steps = vec![
        measure_colour("ISV1G", "state_1", "green", "equal"),
        measure_colour("ISV2G", "state_2", "green", "equal"),
    ];
    machine_steps.extend(bind_bool(
        "HALT",
        ConditionExpr::and(var("ISV1G"), var("ISV2G")),
    ));
    machine_steps.push(measure_colour("ERROR", "stock_orange", "orange", "not_equal"));
    machine_steps.push(
        Step::new("Repeat")
            .with_attr("while_condition", "not HALT and not ERROR")
            .with_children(vec![Step::new("Transition")]),
    );
    let machine = Blueprint {
        id: "TuringMachine".to_string(),
        params: Vec::new(),
        steps: machine_steps,
        pos: None,
    };

    Ok(XdlDocument {
        blueprints: vec![read_state, read_tape, lookup, transition, machine],
        main_steps: vec![Step::new("TuringMachine")],
    })
}

fn waste_id(platform: &Platform) -> Result<String, TmError> {
    platform
        .vessels()
        .find(|v| v.role == VesselRole::Waste)
        .map(|v| v.id.clone())
        .ok_or_else(|| TmError::Layout("platform has no waste vessel".to_string()))
}

fn stock_id(platform: &Platform, colour: ColourClass) -> Result<String, TmError> {
    platform
        .stock_for(colour)
        .map(|v| v.id.clone())
        .ok_or_else(|| TmError::Layout(format!("platform has no {colour} stock")))
}

fn set_vial(platform: &mut Platform, id: &str, colour: ColourClass) -> Result<(), TmError> {
    let total = platform.vessel(id)?.total_volume();
    if !total.is_zero() {
        let waste = waste_id(platform)?;
        platform.transfer(id, &waste, total)?;
    }
    if colour != ColourClass::White {
        let stock = stock_id(platform, colour)?;
        platform.transfer(&stock, id, Volume::from_ml(DOSE_ML)?)?;
    }
    Ok(())
}

fn machine_rows(
    platform: &Platform,
) -> Result<(Vec<(u32, String)>, Vec<(u32, String)>, Vec<(u32, String)>), TmError> {
    let collect = |select: fn(&VesselRole) -> Option<u32>| -> Vec<(u32, String)> {
        platform
            .indexed_vessels(select)
            .into_iter()
            .map(|(i, v)| (i, v.id.clone()))
            .collect()
    };
    let tape = collect(|r| match r {
        VesselRole::Tape(i) => Some(*i),
        _ => None,
    });
    let head = collect(|r| match r {
        VesselRole::Head(i) => Some(*i),
        _ => None,
    });
    let state = collect(|r| match r {
        VesselRole::State(i) => Some(*i),
        _ => None,
    });
    for (label, row) in [("tape", &tape), ("head", &head)] {
        for (offset, (index, _)) in row.iter().enumerate() {
            if *index != offset as u32 + 1 {
                return Err(TmError::Layout(format!(
                    "{label} vial indices are not contiguous from 1"
                )));
            }
        }
    }
    if tape.is_empty() {
        return Err(TmError::Layout("platform has no tape vials".to_string()));
    }
    if tape.len() != head.len() {
        return Err(TmError::Layout(format!(
            "{} tape vials but {} head vials",
            tape.len(),
            head.len()
        )));
    }
    if state.len() != 2 || state[0].0 != 1 || state[1].0 != 2 {
        return Err(TmError::Layout(
            "state row must be exactly the vials state_1 and state_2".to_string(),
        ));
    }
    Ok((tape, head, state))
}

/// Loads a machine configuration onto a platform by pouring vials to
/// match: tape cells take their symbol colours, the head row gets one
/// orange marker, and the state vials take the state's colour pair.
pub fn load_configuration(
    platform: &mut Platform,
    spec: &TmSpec,
    config: &TmConfiguration,
) -> Result<(), TmError> {
    let (tape, head, state) = machine_rows(platform)?;
    if config.tape.len() != tape.len() {
        return Err(TmError::Layout(format!(
            "configuration has {} cells but the platform has {} tape vials",
            config.tape.len(),
            tape.len()
        )));
    }
    if config.head == 0 || config.head > head.len() {
        return Err(TmError::Layout(format!(
            "head position {} is outside the {}-vial head row",
            config.head,
            head.len()
        )));
    }
    for (symbol, (_, id)) in config.tape.iter().zip(&tape) {
        let colour = spec.symbol_colour(symbol).ok_or_else(|| {
            TmError::Validation(format!("configuration holds undeclared symbol {symbol:?}"))
        })?;
        set_vial(platform, id, colour)?;
    }
    for (index, id) in &head {
        let colour = if *index as usize == config.head {
            ColourClass::Orange
        } else {
            ColourClass::White
        };
        set_vial(platform, id, colour)?;
    }
    let pair = encode_state(spec, &config.state)?;
    set_vial(platform, &state[0].1, pair.0)?;
    set_vial(platform, &state[1].1, pair.1)?;
    Ok(())
}

fn decode_colours(
    spec: &TmSpec,
    tape: Vec<(String, ColourClass)>,
    head: Vec<(u32, ColourClass)>,
    state: (ColourClass, ColourClass),
) -> Result<TmConfiguration, TmError> {
    let mut symbols = Vec::with_capacity(tape.len());
    for (vessel, colour) in tape {
        let symbol = spec
            .colour_symbol(colour)
            .ok_or(TmError::UnknownColour { vessel, colour })?;
        symbols.push(symbol.to_string());
    }
    let marked: Vec<u32> = head
        .iter()
        .filter(|(_, colour)| *colour != ColourClass::White)
        .map(|(i, _)| *i)
        .collect();
    if marked.len() != 1 {
        return Err(TmError::HeadAmbiguous {
            count: marked.len(),
        });
    }
    Ok(TmConfiguration {
        state: decode_state_pair(spec, state)?,
        head: marked[0] as usize,
        tape: symbols,
    })
}

/// Reads a machine configuration back off a platform through the camera.
/// Each vial costs one observation; with camera noise the decode sees the
/// noisy classes.
pub fn decode_tape(platform: &mut Platform, spec: &TmSpec) -> Result<TmConfiguration, TmError> {
    let (tape, head, state) = machine_rows(platform)?;
    let mut tape_colours = Vec::new();
    for (_, id) in &tape {
        tape_colours.push((id.clone(), platform.observe_colour(id)?));
    }
    let mut head_colours = Vec::new();
    for (index, id) in &head {
        head_colours.push((*index, platform.observe_colour(id)?));
    }
    let s1 = platform.observe_colour(&state[0].1)?;
    let s2 = platform.observe_colour(&state[1].1)?;
    decode_colours(spec, tape_colours, head_colours, (s1, s2))
}

fn indexed_id(id: &str, prefix: &str) -> Option<u32> {
    id.strip_prefix(prefix).and_then(|rest| rest.parse().ok())
}

/// Decodes a machine configuration from a trace snapshot, using the
/// standard vial naming.
pub fn decode_snapshot(
    snapshot: &BTreeMap<String, VesselSnapshot>,
    spec: &TmSpec,
) -> Result<TmConfiguration, TmError> {
    let mut tape = Vec::new();
    let mut head = Vec::new();
    let mut state = BTreeMap::new();
    for (id, entry) in snapshot {
        if let Some(i) = indexed_id(id, "tape_") {
            tape.push((i, id.clone(), entry.colour));
        } else if let Some(i) = indexed_id(id, "head_") {
            head.push((i, entry.colour));
        } else if let Some(i) = indexed_id(id, "state_") {
            state.insert(i, entry.colour);
        }
    }
    tape.sort_by_key(|(i, _, _)| *i);
    head.sort_by_key(|(i, _)| *i);
    let (s1, s2) = match (state.get(&1), state.get(&2)) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(TmError::Layout("snapshot has no state vials".to_string())),
    };
    if tape.is_empty() {
        return Err(TmError::Layout("snapshot has no tape vials".to_string()));
    }
    decode_colours(
        spec,
        tape.into_iter().map(|(_, id, c)| (id, c)).collect(),
        head,
        (s1, s2),
    )
}

/// Result of running a compiled machine document.
#[derive(Debug)]
pub struct CompiledRun {
    /// Configuration decoded at the start of each loop iteration; after a
    /// halting run this covers every configuration the oracle visits.
    pub configs: Vec<TmConfiguration>,
    /// Configuration decoded from the deck after the loop exited. A
    /// capped run stops mid-transition, so this falls back to the last
    /// iteration-start configuration.
    pub final_config: TmConfiguration,
    /// The loop exited because the halt pair was read.
    pub halted: bool,
    /// The loop exited because the error flag was raised.
    pub errored: bool,
    /// The run hit the step budget before the loop exited.
    pub capped: bool,
    pub executed_steps: u64,
    pub trace: Trace,
}

/// Compiles a machine, loads `initial` onto a fresh standard deck, runs
/// the document, and decodes what happened. Hitting the step budget is
/// reported as a capped run, not an error, so unbounded machines can
/// still be compared against a reference prefix.
pub fn run_compiled(
    spec: &TmSpec,
    initial: &TmConfiguration,
    config: &ExecutionConfig,
) -> Result<CompiledRun, TmError> {
    let tape_len = initial.tape.len() as u32;
    let mut platform = standard_platform(tape_len, tape_len, 2)?;
    load_configuration(&mut platform, spec, initial)?;
    let doc = compile_tm(spec, tape_len)?;
    let (trace, executed_steps, store, capped) = match run(&doc, &mut platform, config) {
        Ok(RunOutcome {
            trace,
            executed_steps,
            store,
        }) => (trace, executed_steps, store, false),
        Err(failure) if matches!(failure.error, RuntimeError::NonTermination { .. }) => {
            (failure.trace, failure.executed_steps, VariableStore::new(), true)
        }
        Err(failure) => return Err(TmError::CompiledRun(failure.error.to_string())),
    };
    let mut configs = Vec::new();
    for event in &trace.events {
        if event.step_name == "ResetVariables" && event.executed {
            if let Some(snapshot) = &event.vessel_snapshot {
                configs.push(decode_snapshot(snapshot, spec)?);
            }
        }
    }
    let final_config = if capped {
        match configs.last() {
            Some(last) => last.clone(),
            None => initial.clone(),
        }
    } else {
        decode_snapshot(&platform.snapshot(), spec)?
    };
    Ok(CompiledRun {
        configs,
        final_config,
        halted: store.get("HALT") == Some(true),
        errored: store.get("ERROR") == Some(true),
        capped,
        executed_steps,
        trace,
    })
}

/// Fixture machines used throughout the tests and the command-line
/// examples.
pub mod fixtures {
    use super::*;

    fn rule(state: &str, read: &str, write: &str, direction: Move, next: &str) -> TmRule {
        TmRule {
            state: state.to_string(),
            read: read.to_string(),
            write: write.to_string(),
            direction,
            next: next.to_string(),
        }
    }

    /// Three-state machine that writes six consecutive ones on an
    /// eight-cell blank tape and halts after fourteen transitions.
    pub fn busy_beaver_3() -> TmSpec {
        TmSpec {
            states: vec!["A".to_string(), "B".to_string(), "C".to_string()],
            halt: "HALT".to_string(),
            alphabet: vec![
                AlphabetSymbol {
                    symbol: "0".to_string(),
                    colour: ColourClass::White,
                },
                AlphabetSymbol {
                    symbol: "1".to_string(),
                    colour: ColourClass::Orange,
                },
            ],
            blank: "0".to_string(),
            rules: vec![
                rule("A", "0", "1", Move::R, "B"),
                rule("A", "1", "1", Move::R, "HALT"),
                rule("B", "0", "0", Move::R, "C"),
                rule("B", "1", "1", Move::R, "B"),
                rule("C", "0", "1", Move::L, "C"),
                rule("C", "1", "1", Move::L, "A"),
            ],
            initial_state: "A".to_string(),
            initial_head: 3,
        }
    }

    /// The busy beaver's starting configuration: eight blank cells, head
    /// on the third.
    pub fn busy_beaver_initial() -> TmConfiguration {
        busy_beaver_3().blank_configuration(8)
    }

    /// Adds two three-bit numbers laid out as `abc x 0 def`: the machine
    /// repeatedly fetches the lowest unconsumed bit of the left number,
    /// carries it five cells right, and adds it in place; a final purge
    /// pass blanks the work area, leaving the sum in the right four cells.
    pub fn binary_adder() -> TmSpec {
        let mut rules = Vec::new();
        // Fetch: walk left to the separator, changing nothing.
        rules.push(rule("F", "0", "0", Move::L, "F"));
        rules.push(rule("F", "1", "1", Move::L, "F"));
        rules.push(rule("F", "x", "x", Move::L, "M"));
        // M, N, O scan the three digits of the left number, right to
        // left. A one is consumed (overwritten with a marker) and sent
        // right; a zero or an already-consumed cell falls through to the
        // next scanner. O marks its consumed digit green so a later pass
        // knows the leftmost digit is done, and otherwise starts the
        // purge.
        rules.push(rule("M", "0", "0", Move::L, "N"));
        rules.push(rule("M", "x", "x", Move::L, "N"));
        rules.push(rule("M", "1", "x", Move::R, "E"));
        rules.push(rule("N", "0", "0", Move::L, "O"));
        rules.push(rule("N", "x", "x", Move::L, "O"));
        rules.push(rule("N", "1", "x", Move::R, "E"));
        rules.push(rule("O", "0", "0", Move::R, "P"));
        rules.push(rule("O", "y", "0", Move::R, "P"));
        rules.push(rule("O", "1", "y", Move::R, "E"));
        // Transport: five cells right in total, preserving the tape.
        for (from, to) in [("E", "D"), ("D", "C"), ("C", "B"), ("B", "A")] {
            rules.push(rule(from, "0", "0", Move::R, to));
            rules.push(rule(from, "1", "1", Move::R, to));
            rules.push(rule(from, "x", "x", Move::R, to));
        }
        // Add one at the current cell, rippling the carry leftwards.
        rules.push(rule("A", "0", "1", Move::L, "F"));
        rules.push(rule("A", "1", "0", Move::L, "A"));
        // Purge: blank everything up to the first one of the sum.
        rules.push(rule("P", "0", "0", Move::R, "P"));
        rules.push(rule("P", "x", "0", Move::R, "P"));
        rules.push(rule("P", "1", "1", Move::L, "H"));

        TmSpec {
            states: ["F", "M", "N", "O", "E", "D", "C", "B", "A", "P"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            halt: "H".to_string(),
            alphabet: vec![
                AlphabetSymbol {
                    symbol: "0".to_string(),
                    colour: ColourClass::White,
                },
                AlphabetSymbol {
                    symbol: "1".to_string(),
                    colour: ColourClass::Orange,
                },
                AlphabetSymbol {
                    symbol: "x".to_string(),
                    colour: ColourClass::Blue,
                },
                AlphabetSymbol {
                    symbol: "y".to_string(),
                    colour: ColourClass::Green,
                },
            ],
            blank: "0".to_string(),
            rules,
            initial_state: "F".to_string(),
            initial_head: 8,
        }
    }

    /// Adder tape for `a + b` with both addends in 0..=7.
    pub fn adder_tape(a: u8, b: u8) -> Vec<String> {
        assert!(a <= 7 && b <= 7, "addends must fit in three bits");
        let bit = |n: u8, shift: u8| {
            if (n >> shift) & 1 == 1 { "1" } else { "0" }.to_string()
        };
        vec![
            bit(a, 2),
            bit(a, 1),
            bit(a, 0),
            "x".to_string(),
            "0".to_string(),
            bit(b, 2),
            bit(b, 1),
            bit(b, 0),
        ]
    }

    pub fn adder_initial(a: u8, b: u8) -> TmConfiguration {
        TmConfiguration {
            state: "F".to_string(),
            head: 8,
            tape: adder_tape(a, b),
        }
    }

    /// Reads the four sum cells of an adder tape as an integer, requiring
    /// every cell left of them to be blank.
    pub fn adder_sum(tape: &[String]) -> Option<u32> {
        if tape.len() != 8 || tape[..4].iter().any(|s| s != "0") {
            return None;
        }
        let mut sum = 0u32;
        for symbol in &tape[4..] {
            sum = sum * 2
                + match symbol.as_str() {
                    "0" => 0,
                    "1" => 1,
                    _ => return None,
                };
        }
        Some(sum)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::runtime::{check, TraceSink};
    use proptest::prelude::*;

    fn oracle_must_halt(spec: &TmSpec, initial: &TmConfiguration, cap: u64) -> OracleOutcome {
        let outcome = oracle_run(spec, initial, cap).expect("machine runs cleanly");
        assert!(outcome.halted, "machine did not halt within {cap}");
        outcome
    }

    #[test]
    fn busy_beaver_oracle_matches_the_frozen_run() {
        let spec = busy_beaver_3();
        spec.validate().unwrap();
        let outcome = oracle_must_halt(&spec, &busy_beaver_initial(), 100);
        assert_eq!(outcome.transitions, 14);
        assert_eq!(outcome.final_config.tape_string(), "01111110");
        assert_eq!(outcome.final_config.head, 5);
        assert_eq!(outcome.final_config.state, "HALT");
    }

    #[test]
    fn busy_beaver_intermediate_configuration_is_frozen() {
        let spec = busy_beaver_3();
        let (configs, end) = oracle_trace(&spec, &busy_beaver_initial(), 100);
        assert_eq!(end, OracleEnd::Halted);
        assert_eq!(configs.len(), 15);
        // Three rows from the bottom: tape 01111010, head on cell 6,
        // state C.
        assert_eq!(configs[11].tape_string(), "01111010");
        assert_eq!(configs[11].head, 6);
        assert_eq!(configs[11].state, "C");
    }

    #[test]
    fn adder_oracle_computes_five_plus_three() {
        let spec = binary_adder();
        spec.validate().unwrap();
        assert_eq!(adder_tape(5, 3).concat(), "101x0011");
        let outcome = oracle_must_halt(&spec, &adder_initial(5, 3), 1_000);
        assert_eq!(outcome.transitions, 32);
        assert_eq!(outcome.final_config.tape_string(), "00001000");
        assert_eq!(adder_sum(&outcome.final_config.tape), Some(8));
    }

    #[test]
    fn adder_oracle_is_correct_on_all_sixty_four_pairs() {
        let spec = binary_adder();
        for a in 0u8..8 {
            for b in 0u8..8 {
                let (configs, end) = oracle_trace(&spec, &adder_initial(a, b), 1_000);
                let final_config = configs.last().unwrap();
                match end {
                    OracleEnd::Halted => {}
                    // The purge never finds a one when the sum is zero
                    // and walks off the right end.
                    OracleEnd::Failed(TmError::TapeBounds { .. }) => {
                        assert_eq!((a, b), (0, 0));
                    }
                    other => panic!("{a}+{b}: unexpected end {other:?}"),
                }
                assert_eq!(
                    adder_sum(&final_config.tape),
                    Some((a + b) as u32),
                    "{a}+{b} produced tape {}",
                    final_config.tape_string()
                );
            }
        }
    }

    #[test]
    fn oracle_reports_missing_rules() {
        let mut spec = busy_beaver_3();
        spec.rules.retain(|r| !(r.state == "B" && r.read == "0"));
        let err = oracle_run(&spec, &busy_beaver_initial(), 100).unwrap_err();
        assert_eq!(
            err,
            TmError::NoRule {
                state: "B".to_string(),
                symbol: "0".to_string()
            }
        );
    }

    #[test]
    fn oracle_reports_tape_bounds() {
        let spec = TmSpec {
            states: vec!["A".to_string()],
            halt: "HALT".to_string(),
            alphabet: vec![AlphabetSymbol {
                symbol: "0".to_string(),
                colour: ColourClass::White,
            }],
            blank: "0".to_string(),
            rules: vec![TmRule {
                state: "A".to_string(),
                read: "0".to_string(),
                write: "0".to_string(),
                direction: Move::L,
                next: "A".to_string(),
            }],
            initial_state: "A".to_string(),
            initial_head: 1,
        };
        let err = oracle_run(&spec, &spec.blank_configuration(4), 10).unwrap_err();
        assert_eq!(
            err,
            TmError::TapeBounds {
                position: 1,
                direction: Move::L,
                tape_len: 4
            }
        );
    }

    #[test]
    fn oracle_cap_reports_an_unfinished_run() {
        let spec = busy_beaver_3();
        let outcome = oracle_run(&spec, &busy_beaver_initial(), 5).unwrap();
        assert!(!outcome.halted);
        assert_eq!(outcome.transitions, 5);
    }

    #[test]
    fn state_encoding_is_frozen() {
        let spec = binary_adder();
        assert_eq!(
            encode_state(&spec, "F").unwrap(),
            (ColourClass::White, ColourClass::White)
        );
        assert_eq!(
            encode_state(&spec, "E").unwrap(),
            (ColourClass::Orange, ColourClass::White)
        );
        assert_eq!(
            encode_state(&spec, "P").unwrap(),
            (ColourClass::Blue, ColourClass::Orange)
        );
        assert_eq!(
            encode_state(&spec, "H").unwrap(),
            (ColourClass::Green, ColourClass::Green)
        );
        assert!(encode_state(&spec, "Z").is_err());
    }

    #[test]
    fn state_codec_round_trips_every_encodable_index() {
        let states: Vec<String> = (0..15).map(|i| format!("Q{i}")).collect();
        let spec = TmSpec {
            states,
            halt: "HALT".to_string(),
            alphabet: vec![AlphabetSymbol {
                symbol: "0".to_string(),
                colour: ColourClass::White,
            }],
            blank: "0".to_string(),
            rules: vec![],
            initial_state: "Q0".to_string(),
            initial_head: 1,
        };
        spec.validate().unwrap();
        let mut pairs = BTreeSet::new();
        for state in spec.states.iter().chain([&spec.halt]) {
            let pair = encode_state(&spec, state).unwrap();
            assert!(pairs.insert(pair), "pair {pair:?} reused");
            assert_eq!(&decode_state_pair(&spec, pair).unwrap(), state);
        }
        assert_eq!(pairs.len(), 16);
        // The last non-halt state sits just before the reserved pair.
        assert_eq!(
            encode_state(&spec, "Q14").unwrap(),
            (ColourClass::Green, ColourClass::Blue)
        );
    }

    #[test]
    fn validation_rejects_malformed_machines() {
        let base = busy_beaver_3();

        let mut spec = base.clone();
        spec.states = (0..16).map(|i| format!("Q{i}")).collect();
        assert!(matches!(
            spec.validate(),
            Err(TmError::EncodingOverflow { found: 16 })
        ));

        let mut spec = base.clone();
        spec.states.push("A".to_string());
        assert!(spec.validate().is_err());

        let mut spec = base.clone();
        spec.rules.push(TmRule {
            state: "HALT".to_string(),
            read: "0".to_string(),
            write: "0".to_string(),
            direction: Move::R,
            next: "A".to_string(),
        });
        assert!(spec.validate().is_err());

        let mut spec = base.clone();
        spec.rules[0].write = "9".to_string();
        assert!(spec.validate().is_err());

        let mut spec = base.clone();
        spec.rules.push(spec.rules[0].clone());
        assert!(spec.validate().is_err());

        let mut spec = base.clone();
        spec.alphabet[0].colour = ColourClass::Blue;
        assert!(spec.validate().is_err());

        let mut spec = base.clone();
        spec.alphabet.push(AlphabetSymbol {
            symbol: "2".to_string(),
            colour: ColourClass::Orange,
        });
        assert!(spec.validate().is_err());

        let mut spec = base.clone();
        spec.alphabet = (0..5)
            .map(|i| AlphabetSymbol {
                symbol: format!("{i}"),
                colour: ColourClass::White,
            })
            .collect();
        assert!(matches!(
            spec.validate(),
            Err(TmError::AlphabetOverflow { found: 5 })
        ));

        let mut spec = base.clone();
        spec.initial_head = 0;
        assert!(spec.validate().is_err());

        let mut spec = base.clone();
        spec.initial_state = "Z".to_string();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn machine_json_round_trips() {
        let spec = busy_beaver_3();
        let json = tm_spec_to_json(&spec);
        assert_eq!(tm_spec_from_json(&json).unwrap(), spec);
        assert!(json.contains("\"move\": \"R\""));

        let unknown_field = json.replace("\"halt\"", "\"stop\"");
        assert!(tm_spec_from_json(&unknown_field).is_err());
    }

    #[test]
    fn load_and_decode_round_trip_through_the_deck() {
        let spec = binary_adder();
        let mut platform = standard_platform(8, 8, 2).unwrap();
        let config = adder_initial(5, 3);
        load_configuration(&mut platform, &spec, &config).unwrap();
        assert_eq!(platform.observations(), 0);
        let decoded = decode_tape(&mut platform, &spec).unwrap();
        assert_eq!(decoded, config);
        // 8 tape + 8 head + 2 state observations.
        assert_eq!(platform.observations(), 18);
    }

    #[test]
    fn load_rejects_misshapen_configurations() {
        let spec = busy_beaver_3();
        let mut platform = standard_platform(8, 8, 2).unwrap();
        let mut config = busy_beaver_initial();
        config.tape.pop();
        assert!(matches!(
            load_configuration(&mut platform, &spec, &config),
            Err(TmError::Layout(_))
        ));
        let mut config = busy_beaver_initial();
        config.head = 9;
        assert!(matches!(
            load_configuration(&mut platform, &spec, &config),
            Err(TmError::Layout(_))
        ));
        let mut bad_platform = standard_platform(8, 8, 1).unwrap();
        assert!(matches!(
            load_configuration(&mut bad_platform, &spec, &busy_beaver_initial()),
            Err(TmError::Layout(_))
        ));
    }

    #[test]
    fn decode_rejects_ambiguous_heads() {
        let spec = busy_beaver_3();
        let mut platform = standard_platform(8, 8, 2).unwrap();
        load_configuration(&mut platform, &spec, &busy_beaver_initial()).unwrap();

        let mut no_head = platform.clone();
        let volume = no_head.vessel("head_3").unwrap().total_volume();
        no_head.transfer("head_3", "waste", volume).unwrap();
        assert_eq!(
            decode_tape(&mut no_head, &spec).unwrap_err(),
            TmError::HeadAmbiguous { count: 0 }
        );

        let mut two_heads = platform.clone();
        two_heads
            .transfer("stock_orange", "head_5", Volume::from_ml(5.0).unwrap())
            .unwrap();
        assert_eq!(
            decode_tape(&mut two_heads, &spec).unwrap_err(),
            TmError::HeadAmbiguous { count: 2 }
        );
    }

    #[test]
    fn decode_rejects_colours_outside_the_alphabet() {
        let spec = busy_beaver_3();
        let mut platform = standard_platform(8, 8, 2).unwrap();
        load_configuration(&mut platform, &spec, &busy_beaver_initial()).unwrap();
        // Half orange, half blue reads as the unknown class.
        platform
            .transfer("stock_orange", "tape_2", Volume::from_ml(2.5).unwrap())
            .unwrap();
        platform
            .transfer("stock_blue", "tape_2", Volume::from_ml(2.5).unwrap())
            .unwrap();
        let err = decode_tape(&mut platform, &spec).unwrap_err();
        assert_eq!(
            err,
            TmError::UnknownColour {
                vessel: "tape_2".to_string(),
                colour: ColourClass::Unknown
            }
        );
    }

    #[test]
    fn compiled_document_has_the_expected_shape_and_passes_the_checker() {
        let spec = busy_beaver_3();
        let doc = compile_tm(&spec, 8).unwrap();
        let ids: Vec<&str> = doc.blueprints.iter().map(|b| b.id.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "ReadState",
                "ReadTape",
                "LookUpTable",
                "Transition",
                "TuringMachine"
            ]
        );
        assert_eq!(doc.main_steps.len(), 1);
        assert_eq!(doc.main_steps[0].name, "TuringMachine");
        let machine = doc.blueprint("TuringMachine").unwrap();
        let repeat = machine.steps.last().unwrap();
        assert_eq!(repeat.name, "Repeat");
        assert_eq!(
            repeat.attributes.get("while_condition"),
            Some("not HALT and not ERROR")
        );
        assert_eq!(repeat.children.len(), 1);
        assert_eq!(repeat.children[0].name, "Transition");

        let platform = standard_platform(8, 8, 2).unwrap();
        assert_eq!(check(&doc, &platform), Vec::new());
    }

    #[test]
    fn compiled_document_survives_a_parse_round_trip() {
        use crate::parser::{document_to_xml, parse_document};
        let spec = busy_beaver_3();
        let doc = compile_tm(&spec, 8).unwrap();
        let xml = document_to_xml(&doc);
        let reparsed = parse_document(&xml).unwrap();
        let platform = standard_platform(8, 8, 2).unwrap();
        assert_eq!(check(&reparsed, &platform), Vec::new());
        // The reparsed document drives the deck exactly like the
        // constructed one.
        let run_doc = |doc: &XdlDocument| {
            let mut platform = standard_platform(8, 8, 2).unwrap();
            load_configuration(&mut platform, &spec, &busy_beaver_initial()).unwrap();
            run(doc, &mut platform, &ExecutionConfig::default()).unwrap();
            platform
        };
        assert_eq!(run_doc(&doc), run_doc(&reparsed));
    }

    #[test]
    fn one_rule_machine_compiles_and_takes_one_transition() {
        let spec = TmSpec {
            states: vec!["A".to_string()],
            halt: "HALT".to_string(),
            alphabet: vec![AlphabetSymbol {
                symbol: "0".to_string(),
                colour: ColourClass::White,
            }],
            blank: "0".to_string(),
            rules: vec![TmRule {
                state: "A".to_string(),
                read: "0".to_string(),
                write: "0".to_string(),
                direction: Move::R,
                next: "HALT".to_string(),
            }],
            initial_state: "A".to_string(),
            initial_head: 1,
        };
        let run = run_compiled(&spec, &spec.blank_configuration(2), &ExecutionConfig::default())
            .unwrap();
        assert!(run.halted);
        assert!(!run.errored);
        assert_eq!(run.configs.len(), 2);
        assert_eq!(run.final_config.state, "HALT");
        assert_eq!(run.final_config.head, 2);
    }

    #[test]
    fn compiled_busy_beaver_tracks_the_oracle_exactly() {
        let spec = busy_beaver_3();
        let initial = busy_beaver_initial();
        let (oracle_configs, end) = oracle_trace(&spec, &initial, 100);
        assert_eq!(end, OracleEnd::Halted);
        let compiled = run_compiled(&spec, &initial, &ExecutionConfig {
            max_steps: 20_000,
            ..ExecutionConfig::default()
        })
        .unwrap();
        assert!(compiled.halted);
        assert!(!compiled.errored);
        // One loop iteration per oracle configuration: fourteen that
        // transition plus the final one that reads HALT and exits.
        assert_eq!(compiled.configs, oracle_configs);
        assert_eq!(compiled.final_config, oracle_configs[14]);
        assert_eq!(compiled.final_config.tape_string(), "01111110");
    }

    #[test]
    fn machine_starting_in_the_halt_state_never_enters_the_loop() {
        let mut spec = busy_beaver_3();
        spec.initial_state = "HALT".to_string();
        let initial = spec.blank_configuration(4);
        let compiled =
            run_compiled(&spec, &initial, &ExecutionConfig::default()).unwrap();
        assert!(compiled.halted);
        assert!(compiled.configs.is_empty());
        assert_eq!(compiled.final_config, initial);
    }

    #[test]
    fn compiled_boundary_move_raises_the_error_flag() {
        let spec = TmSpec {
            states: vec!["A".to_string()],
            halt: "HALT".to_string(),
            alphabet: vec![AlphabetSymbol {
                symbol: "0".to_string(),
                colour: ColourClass::White,
            }],
            blank: "0".to_string(),
            rules: vec![TmRule {
                state: "A".to_string(),
                read: "0".to_string(),
                write: "0".to_string(),
                direction: Move::R,
                next: "A".to_string(),
            }],
            initial_state: "A".to_string(),
            initial_head: 1,
        };
        let initial = spec.blank_configuration(4);
        let compiled = run_compiled(&spec, &initial, &ExecutionConfig {
            max_steps: 50_000,
            ..ExecutionConfig::default()
        })
        .unwrap();
        assert!(compiled.errored);
        assert!(!compiled.halted);
        // Head walks 1 -> 4, then the fourth iteration's move is refused.
        assert_eq!(compiled.configs.len(), 4);
        assert_eq!(compiled.final_config.head, 4);
        assert_eq!(compiled.final_config.state, "A");
        let (oracle_configs, end) = oracle_trace(&spec, &initial, 100);
        assert!(matches!(
            end,
            OracleEnd::Failed(TmError::TapeBounds { position: 4, .. })
        ));
        assert_eq!(compiled.configs, oracle_configs);
    }

    #[test]
    fn thirteen_state_machine_compiles_and_runs() {
        // Exercises colour pairs beyond the first row of the encoding
        // table.
        let states: Vec<String> = (0..13).map(|i| format!("Q{i}")).collect();
        let mut rules: Vec<TmRule> = (0..12)
            .map(|i| TmRule {
                state: format!("Q{i}"),
                read: "0".to_string(),
                write: "1".to_string(),
                direction: Move::R,
                next: format!("Q{}", i + 1),
            })
            .collect();
        rules.push(TmRule {
            state: "Q12".to_string(),
            read: "0".to_string(),
            write: "1".to_string(),
            direction: Move::L,
            next: "HALT".to_string(),
        });
        let spec = TmSpec {
            states,
            halt: "HALT".to_string(),
            alphabet: busy_beaver_3().alphabet,
            blank: "0".to_string(),
            rules,
            initial_state: "Q0".to_string(),
            initial_head: 1,
        };
        spec.validate().unwrap();
        let initial = spec.blank_configuration(14);
        let oracle = oracle_run(&spec, &initial, 100).unwrap();
        assert!(oracle.halted);
        assert_eq!(oracle.transitions, 13);
        let compiled = run_compiled(&spec, &initial, &ExecutionConfig {
            max_steps: 200_000,
            trace_sink: TraceSink::Discard,
        })
        .unwrap();
        assert!(compiled.halted);
        assert_eq!(compiled.final_config, oracle.final_config);
    }

    #[test]
    fn machine_fixture_files_match_the_builtin_machines() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");
        for (file, spec) in [
            ("busy_beaver_3.json", busy_beaver_3()),
            ("binary_adder.json", binary_adder()),
        ] {
            let text = std::fs::read_to_string(format!("{dir}/{file}")).unwrap();
            let parsed = tm_spec_from_json(&text).unwrap();
            assert_eq!(parsed, spec, "{file} drifted from the code");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn deck_codec_round_trips_random_configurations(
            tape_bits in proptest::collection::vec(0usize..4, 5),
            head in 1usize..=5,
            state_index in 0usize..11,
        ) {
            let spec = binary_adder();
            let symbols = ["0", "1", "x", "y"];
            let state = if state_index == 10 {
                spec.halt.clone()
            } else {
                spec.states[state_index].clone()
            };
            let config = TmConfiguration {
                state,
                head,
                tape: tape_bits.iter().map(|&b| symbols[b].to_string()).collect(),
            };
            let mut platform = standard_platform(5, 5, 2).unwrap();
            load_configuration(&mut platform, &spec, &config).unwrap();
            let decoded = decode_tape(&mut platform, &spec).unwrap();
            prop_assert_eq!(decoded, config);
        }
    }
}
