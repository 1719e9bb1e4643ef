//! Step interpreter and static checker.
//!
//! [`run`] walks a document's main steps against a platform, evaluating
//! conditions against the variable store, dispatching built-in steps, and
//! expanding blueprint invocations. Execution is bounded by a step budget
//! so non-halting programs fail cleanly instead of spinning.
//!
//! [`check`] performs the same walk statically: it expands every reachable
//! blueprint invocation and reports unknown step names, unknown vessels,
//! malformed attributes, and suspicious variable flow without touching the
//! platform.

use crate::ast::{normalize, ConditionExpr, SourcePos, Step, XdlDocument};
use crate::condition::{
    bind, compare, evaluate, Comparator, ConditionError, MeasuredValue, Unit, VariableStore,
};
use crate::parser::{parse_condition, ParseDiagnostic};
use crate::platform::{LiquidSample, Platform, PlatformError, Volume};
use crate::trace::{Trace, TraceEvent};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Deepest allowed chain of blueprint invocations.
pub const MAX_CALL_DEPTH: usize = 64;

const BUILTINS: [&str; 8] = [
    "Transfer",
    "Measure",
    "Repeat",
    "ResetVariables",
    "Wait",
    "Stir",
    "Heat",
    "Add",
];

/// Where trace events go during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceSink {
    /// Collect events in memory and return them in the outcome.
    #[default]
    Memory,
    /// Drop events as they are produced; the outcome has an empty trace.
    Discard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionConfig {
    /// Budget of countable work units: executed leaf steps plus one per
    /// loop iteration. Exceeding it aborts the run.
    pub max_steps: u64,
    pub trace_sink: TraceSink,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            max_steps: 10_000,
            trace_sink: TraceSink::Memory,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: Trace,
    pub executed_steps: u64,
    pub store: VariableStore,
}

/// A failed run, with everything observed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: RuntimeError,
    pub trace: Trace,
    pub executed_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("execution exceeded the step budget of {max_steps}")]
    NonTermination { max_steps: u64 },
    #[error("{step}: condition references undefined variable {name:?}")]
    UndefinedVariable { step: String, name: String },
    #[error("unknown step name {name:?}")]
    UnknownStepName { name: String },
    #[error("{step}: {source}")]
    Platform {
        step: String,
        #[source]
        source: PlatformError,
    },
    #[error("{step}: {source}")]
    Comparison {
        step: String,
        #[source]
        source: ConditionError,
    },
    #[error("{step}: missing required attribute {attribute:?}")]
    MissingAttribute { step: String, attribute: String },
    #[error("{step}: attribute {attribute:?}: {message}")]
    BadAttribute {
        step: String,
        attribute: String,
        message: String,
    },
    #[error("{step}: vessel {vessel:?} has no {quantity:?} reading")]
    MissingQuantity {
        step: String,
        vessel: String,
        quantity: String,
    },
    #[error("{step}: no parameter named {name:?} is in scope")]
    UnresolvedParam { step: String, name: String },
    #[error("blueprint invocations nested deeper than {limit}")]
    RecursionLimit { limit: usize },
}

fn step_label(step: &Step) -> String {
    match step.pos {
        Some(pos) => format!("step {} at {}:{}", step.name, pos.line, pos.column),
        None => format!("step {}", step.name),
    }
}

/// Substitutes `$name` references in an attribute value. `$` not followed
/// by an identifier character is literal. Substitution is a single pass:
/// values brought in for a parameter are not scanned again.
fn substitute(value: &str, params: &BTreeMap<String, String>) -> Result<String, String> {
    let chars: Vec<char> = value.chars().collect();
    let mut out = String::with_capacity(value.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '$' && i + 1 < chars.len() && (chars[i + 1].is_ascii_alphabetic() || chars[i + 1] == '_')
        {
            let start = i + 1;
            let mut end = start;
            while end < chars.len() && (chars[end].is_ascii_alphanumeric() || chars[end] == '_') {
                end += 1;
            }
            let name: String = chars[start..end].iter().collect();
            match params.get(&name) {
                Some(replacement) => out.push_str(replacement),
                None => return Err(name),
            }
            i = end;
        } else {
            out.push(c);
            i += 1;
        }
    }
    Ok(out)
}

fn parse_volume_attr(text: &str) -> Result<Volume, String> {
    let trimmed = text.trim();
    let number = trimmed
        .strip_suffix("mL")
        .or_else(|| trimmed.strip_suffix("ml"))
        .unwrap_or(trimmed)
        .trim();
    let ml: f64 = number
        .parse()
        .map_err(|_| format!("{text:?} is not a volume"))?;
    Volume::from_ml(ml).map_err(|_| format!("{text:?} is not a usable volume"))
}

fn parse_rgb_attr(text: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("{text:?} is not an r,g,b triple"));
    }
    let mut rgb = [0u8; 3];
    for (slot, part) in rgb.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| format!("{text:?} is not an r,g,b triple"))?;
    }
    Ok(rgb)
}

struct Executor<'a> {
    doc: &'a XdlDocument,
    platform: &'a mut Platform,
    config: &'a ExecutionConfig,
    store: VariableStore,
    events: Vec<TraceEvent>,
    seq: u64,
    used_steps: u64,
}

impl<'a> Executor<'a> {
    fn emit(&mut self, event: TraceEvent) {
        if self.config.trace_sink == TraceSink::Memory {
            self.events.push(event);
        }
    }

    fn next_event(&mut self, step: &Step, attributes: &BTreeMap<String, String>) -> TraceEvent {
        let mut event = TraceEvent::new(self.seq, step.name.clone());
        self.seq += 1;
        event.attributes = attributes.clone();
        event
    }

    fn charge(&mut self) -> Result<(), RuntimeError> {
        if self.used_steps >= self.config.max_steps {
            return Err(RuntimeError::NonTermination {
                max_steps: self.config.max_steps,
            });
        }
        self.used_steps += 1;
        Ok(())
    }

    fn resolve_attributes(
        &self,
        step: &Step,
        params: &BTreeMap<String, String>,
    ) -> Result<BTreeMap<String, String>, RuntimeError> {
        let mut out = BTreeMap::new();
        for (key, value) in step.attributes.iter() {
            let resolved = if key == "condition" || key == "while_condition" {
                value.to_string()
            } else {
                substitute(value, params).map_err(|name| RuntimeError::UnresolvedParam {
                    step: step_label(step),
                    name,
                })?
            };
            out.insert(key.to_string(), resolved);
        }
        Ok(out)
    }

    fn require<'m>(
        &self,
        step: &Step,
        attrs: &'m BTreeMap<String, String>,
        key: &str,
    ) -> Result<&'m str, RuntimeError> {
        attrs
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| RuntimeError::MissingAttribute {
                step: step_label(step),
                attribute: key.to_string(),
            })
    }

    fn bad_attr(&self, step: &Step, attribute: &str, message: impl Into<String>) -> RuntimeError {
        RuntimeError::BadAttribute {
            step: step_label(step),
            attribute: attribute.to_string(),
            message: message.into(),
        }
    }

    fn eval_condition(&self, step: &Step, expr: &ConditionExpr) -> Result<bool, RuntimeError> {
        evaluate(expr, &self.store).map_err(|e| match e {
            ConditionError::UndefinedVariable(name) => RuntimeError::UndefinedVariable {
                step: step_label(step),
                name,
            },
            other => RuntimeError::Comparison {
                step: step_label(step),
                source: other,
            },
        })
    }

    fn measure_quantity(
        &mut self,
        step: &Step,
        target: &str,
        quantity: &str,
    ) -> Result<MeasuredValue, RuntimeError> {
        let platform_err = |step: &Step, source: PlatformError| RuntimeError::Platform {
            step: step_label(step),
            source,
        };
        match quantity {
            "colour" => {
                let colour = self
                    .platform
                    .observe_colour(target)
                    .map_err(|e| platform_err(step, e))?;
                Ok(MeasuredValue::Colour(colour))
            }
            "volume" => {
                let vessel = self.platform.vessel(target).map_err(|e| platform_err(step, e))?;
                Ok(MeasuredValue::number(
                    vessel.total_volume().as_ml(),
                    Unit::Millilitres,
                ))
            }
            other => {
                let vessel = self.platform.vessel(target).map_err(|e| platform_err(step, e))?;
                let value = vessel.attributes.get(other).copied().ok_or_else(|| {
                    RuntimeError::MissingQuantity {
                        step: step_label(step),
                        vessel: target.to_string(),
                        quantity: other.to_string(),
                    }
                })?;
                let unit = match other {
                    "temperature" => Unit::Celsius,
                    "ph" => Unit::Ph,
                    _ => Unit::Unitless,
                };
                Ok(MeasuredValue::number(value, unit))
            }
        }
    }

    fn exec_step(
        &mut self,
        step: &Step,
        params: &BTreeMap<String, String>,
        depth: usize,
    ) -> Result<(), RuntimeError> {
        let attrs = self.resolve_attributes(step, params)?;
        let (condition_text, condition_value) = match &step.condition {
            None => (None, None),
            Some(expr) => {
                let text = step
                    .attributes
                    .get("condition")
                    .map(str::to_string)
                    .unwrap_or_else(|| expr.to_string());
                let value = self.eval_condition(step, expr)?;
                (Some(text), Some(value))
            }
        };
        let executed = condition_value.unwrap_or(true);

        match step.name.as_str() {
            "Transfer" => {
                let mut event = self.next_event(step, &attrs);
                event.condition_text = condition_text;
                event.condition_value = condition_value;
                event.executed = executed;
                if executed {
                    self.charge()?;
                    let from = self.require(step, &attrs, "from")?.to_string();
                    let to = self.require(step, &attrs, "to")?.to_string();
                    let volume_text = self.require(step, &attrs, "volume")?;
                    let volume = parse_volume_attr(volume_text)
                        .map_err(|m| self.bad_attr(step, "volume", m))?;
                    self.platform
                        .transfer(&from, &to, volume)
                        .map_err(|source| RuntimeError::Platform {
                            step: step_label(step),
                            source,
                        })?;
                }
                self.emit(event);
            }
            "Measure" => {
                let mut event = self.next_event(step, &attrs);
                event.condition_text = condition_text;
                event.condition_value = condition_value;
                event.executed = executed;
                if executed {
                    self.charge()?;
                    let step_id = self.require(step, &attrs, "step_id")?.to_string();
                    let target = self.require(step, &attrs, "target")?.to_string();
                    let quantity = self.require(step, &attrs, "quantity")?.to_string();
                    let true_if = self.require(step, &attrs, "true_if")?;
                    let comparator = Comparator::parse(true_if).ok_or_else(|| {
                        self.bad_attr(step, "true_if", format!("unknown comparator {true_if:?}"))
                    })?;
                    let comparison = self.require(step, &attrs, "comparison_value")?.to_string();
                    let value = self.measure_quantity(step, &target, &quantity)?;
                    let outcome =
                        compare(&value, comparator, &comparison).map_err(|source| {
                            RuntimeError::Comparison {
                                step: step_label(step),
                                source,
                            }
                        })?;
                    bind(&mut self.store, &step_id, outcome);
                    event.store_delta.insert(step_id, Some(outcome));
                }
                self.emit(event);
            }
            "Repeat" => {
                self.exec_repeat(step, params, depth, attrs, condition_text, condition_value)?;
            }
            "ResetVariables" => {
                let mut event = self.next_event(step, &attrs);
                event.condition_text = condition_text;
                event.condition_value = condition_value;
                event.executed = executed;
                if executed {
                    self.charge()?;
                    for (name, _) in self.store.iter() {
                        event.store_delta.insert(name.to_string(), None);
                    }
                    self.store.clear();
                    if self.config.trace_sink == TraceSink::Memory {
                        event.vessel_snapshot = Some(self.platform.snapshot());
                    }
                }
                self.emit(event);
            }
            "Wait" | "Stir" | "Heat" => {
                let mut event = self.next_event(step, &attrs);
                event.condition_text = condition_text;
                event.condition_value = condition_value;
                event.executed = executed;
                if executed {
                    self.charge()?;
                }
                self.emit(event);
            }
            "Add" => {
                let mut event = self.next_event(step, &attrs);
                event.condition_text = condition_text;
                event.condition_value = condition_value;
                event.executed = executed;
                if executed {
                    self.charge()?;
                    let vessel = self.require(step, &attrs, "vessel")?.to_string();
                    let volume_text = self.require(step, &attrs, "volume")?;
                    let volume = parse_volume_attr(volume_text)
                        .map_err(|m| self.bad_attr(step, "volume", m))?;
                    let reagent = attrs
                        .get("reagent")
                        .cloned()
                        .unwrap_or_else(|| "sample".to_string());
                    let rgb = match attrs.get("rgb") {
                        None => [245, 245, 245],
                        Some(text) => {
                            parse_rgb_attr(text).map_err(|m| self.bad_attr(step, "rgb", m))?
                        }
                    };
                    self.platform
                        .add_sample(&vessel, LiquidSample::new(reagent, volume, rgb))
                        .map_err(|source| RuntimeError::Platform {
                            step: step_label(step),
                            source,
                        })?;
                }
                self.emit(event);
            }
            other => {
                let blueprint = match self.doc.blueprint(other) {
                    Some(bp) => bp,
                    None => {
                        return Err(RuntimeError::UnknownStepName {
                            name: other.to_string(),
                        })
                    }
                };
                let mut event = self.next_event(step, &attrs);
                event.condition_text = condition_text;
                event.condition_value = condition_value;
                event.executed = executed;
                self.emit(event);
                if executed {
                    if depth + 1 > MAX_CALL_DEPTH {
                        return Err(RuntimeError::RecursionLimit {
                            limit: MAX_CALL_DEPTH,
                        });
                    }
                    let mut child_params: BTreeMap<String, String> =
                        blueprint.params.iter().cloned().collect();
                    for (key, value) in &attrs {
                        if key == "condition" {
                            continue;
                        }
                        if child_params.contains_key(key) {
                            child_params.insert(key.clone(), value.clone());
                        }
                    }
                    let steps = blueprint.steps.clone();
                    for child in &steps {
                        self.exec_step(child, &child_params, depth + 1)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn exec_repeat(
        &mut self,
        step: &Step,
        params: &BTreeMap<String, String>,
        depth: usize,
        attrs: BTreeMap<String, String>,
        condition_text: Option<String>,
        condition_value: Option<bool>,
    ) -> Result<(), RuntimeError> {
        let executed = condition_value.unwrap_or(true);
        let times = attrs.get("times").cloned();
        let while_text = attrs.get("while_condition").cloned();
        match (times, while_text) {
            (Some(_), Some(_)) | (None, None) => Err(self.bad_attr(
                step,
                "times",
                "Repeat takes exactly one of times and while_condition",
            )),
            (Some(times_text), None) => {
                let count: u64 = times_text
                    .trim()
                    .parse()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| {
                        self.bad_attr(
                            step,
                            "times",
                            format!("{times_text:?} is not a positive iteration count"),
                        )
                    })?;
                let mut event = self.next_event(step, &attrs);
                event.condition_text = condition_text;
                event.condition_value = condition_value;
                event.executed = executed;
                self.emit(event);
                if executed {
                    for _ in 0..count {
                        self.charge()?;
                        for child in &step.children {
                            self.exec_step(child, params, depth)?;
                        }
                    }
                }
                Ok(())
            }
            (None, Some(while_text)) => {
                let expr = parse_condition(&while_text)
                    .map_err(|diag| self.bad_attr(step, "while_condition", diag.message))?;
                if !executed {
                    let mut event = self.next_event(step, &attrs);
                    event.condition_text = condition_text;
                    event.condition_value = condition_value;
                    event.executed = false;
                    self.emit(event);
                    return Ok(());
                }
                loop {
                    self.charge()?;
                    let keep_going = self.eval_condition(step, &expr)?;
                    let mut event = self.next_event(step, &attrs);
                    event.condition_text = Some(while_text.clone());
                    event.condition_value = Some(keep_going);
                    event.executed = keep_going;
                    self.emit(event);
                    if !keep_going {
                        return Ok(());
                    }
                    for child in &step.children {
                        self.exec_step(child, params, depth)?;
                    }
                }
            }
        }
    }
}

/// Runs a document's main steps against the platform.
///
/// The platform is mutated in place and reflects all progress made, even
/// when the run fails; the failure carries the trace collected so far.
pub fn run(
    doc: &XdlDocument,
    platform: &mut Platform,
    config: &ExecutionConfig,
) -> Result<RunOutcome, Box<RunFailure>> {
    let doc = normalize(doc);
    let mut executor = Executor {
        doc: &doc,
        platform,
        config,
        store: VariableStore::new(),
        events: Vec::new(),
        seq: 0,
        used_steps: 0,
    };
    let empty = BTreeMap::new();
    let mut failure = None;
    for step in &doc.main_steps {
        if let Err(error) = executor.exec_step(step, &empty, 0) {
            failure = Some(error);
            break;
        }
    }
    let trace = Trace {
        events: executor.events,
    };
    match failure {
        None => Ok(RunOutcome {
            trace,
            executed_steps: executor.used_steps,
            store: executor.store,
        }),
        Some(error) => Err(Box::new(RunFailure {
            error,
            trace,
            executed_steps: executor.used_steps,
        })),
    }
}

struct MeasureSite {
    step_id: String,
    unconditional: bool,
    visit: usize,
    pos: SourcePos,
}

struct Checker<'a> {
    doc: &'a XdlDocument,
    platform: &'a Platform,
    diags: Vec<ParseDiagnostic>,
    visit: usize,
    measures: Vec<MeasureSite>,
    uses: Vec<(String, usize, SourcePos)>,
    invoked: BTreeSet<String>,
}

impl<'a> Checker<'a> {
    fn pos(step: &Step) -> SourcePos {
        step.pos.unwrap_or(SourcePos { line: 0, column: 0 })
    }

    fn error(&mut self, pos: SourcePos, message: impl Into<String>) {
        self.diags
            .push(ParseDiagnostic::error(pos, message));
    }

    fn warning(&mut self, pos: SourcePos, message: impl Into<String>) {
        self.diags
            .push(ParseDiagnostic::warning(pos, message));
    }

    fn resolve(
        &mut self,
        step: &Step,
        params: &BTreeMap<String, String>,
    ) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (key, value) in step.attributes.iter() {
            if key == "condition" || key == "while_condition" {
                out.insert(key.to_string(), value.to_string());
                continue;
            }
            match substitute(value, params) {
                Ok(resolved) => {
                    out.insert(key.to_string(), resolved);
                }
                Err(name) => {
                    self.error(
                        Self::pos(step),
                        format!("no parameter named {name:?} is in scope"),
                    );
                    out.insert(key.to_string(), value.to_string());
                }
            }
        }
        out
    }

    fn check_vessel(&mut self, step: &Step, attrs: &BTreeMap<String, String>, key: &str) {
        if let Some(id) = attrs.get(key) {
            if !self.platform.has_vessel(id) {
                self.error(
                    Self::pos(step),
                    format!("unknown vessel {id:?} in attribute {key:?}"),
                );
            }
        } else {
            self.error(
                Self::pos(step),
                format!("step {} is missing attribute {key:?}", step.name),
            );
        }
    }

    fn check_volume(&mut self, step: &Step, attrs: &BTreeMap<String, String>, key: &str) {
        match attrs.get(key) {
            None => self.error(
                Self::pos(step),
                format!("step {} is missing attribute {key:?}", step.name),
            ),
            Some(text) => {
                if let Err(message) = parse_volume_attr(text) {
                    self.error(Self::pos(step), message);
                }
            }
        }
    }

    fn record_uses(&mut self, expr: &ConditionExpr, visit: usize, pos: SourcePos) {
        let mut vars = Vec::new();
        expr.variables(&mut vars);
        for var in vars {
            self.uses.push((var.to_string(), visit, pos));
        }
    }

    fn walk(
        &mut self,
        step: &Step,
        params: &BTreeMap<String, String>,
        depth: usize,
        record_flow: bool,
    ) {
        let visit = self.visit;
        self.visit += 1;
        let pos = Self::pos(step);
        let attrs = self.resolve(step, params);
        if record_flow {
            if let Some(expr) = &step.condition {
                self.record_uses(&expr.clone(), visit, pos);
            }
        }
        match step.name.as_str() {
            "Transfer" => {
                self.check_vessel(step, &attrs, "from");
                self.check_vessel(step, &attrs, "to");
                self.check_volume(step, &attrs, "volume");
            }
            "Measure" => {
                for key in ["step_id", "quantity", "true_if", "comparison_value"] {
                    if !attrs.contains_key(key) {
                        self.error(
                            pos,
                            format!("step Measure is missing attribute {key:?}"),
                        );
                    }
                }
                self.check_vessel(step, &attrs, "target");
                let comparator = attrs.get("true_if").and_then(|t| Comparator::parse(t));
                if let Some(text) = attrs.get("true_if") {
                    if comparator.is_none() {
                        self.error(pos, format!("unknown comparator {text:?}"));
                    }
                }
                if let (Some(quantity), Some(value)) =
                    (attrs.get("quantity"), attrs.get("comparison_value"))
                {
                    self.check_comparison_value(pos, quantity, comparator, value);
                }
                if record_flow {
                    if let Some(id) = attrs.get("step_id") {
                        self.measures.push(MeasureSite {
                            step_id: id.clone(),
                            unconditional: step.condition.is_none(),
                            visit,
                            pos,
                        });
                    }
                }
            }
            "Repeat" => {
                let times = attrs.get("times");
                let while_text = attrs.get("while_condition").cloned();
                match (times, &while_text) {
                    (Some(_), Some(_)) | (None, None) => {
                        self.error(pos, "Repeat takes exactly one of times and while_condition");
                    }
                    (Some(text), None) => {
                        if text.trim().parse::<u64>().ok().filter(|n| *n > 0).is_none() {
                            self.error(
                                pos,
                                format!("{text:?} is not a positive iteration count"),
                            );
                        }
                    }
                    (None, Some(text)) => match parse_condition(text) {
                        Ok(expr) => {
                            if record_flow {
                                self.record_uses(&expr, visit, pos);
                            }
                        }
                        Err(diag) => {
                            self.error(pos, format!("malformed while_condition: {}", diag.message));
                        }
                    },
                }
                if step.children.is_empty() {
                    self.error(pos, "Repeat must have at least one child step");
                }
                for child in &step.children {
                    self.walk(child, params, depth, record_flow);
                }
            }
            "ResetVariables" | "Wait" | "Stir" | "Heat" => {}
            "Add" => {
                self.check_vessel(step, &attrs, "vessel");
                self.check_volume(step, &attrs, "volume");
                if let Some(text) = attrs.get("rgb") {
                    if let Err(message) = parse_rgb_attr(text) {
                        self.error(pos, message);
                    }
                }
            }
            other => match self.doc.blueprint(other) {
                None => {
                    self.error(pos, format!("unknown step name {other:?}"));
                }
                Some(blueprint) => {
                    self.invoked.insert(other.to_string());
                    if depth + 1 > MAX_CALL_DEPTH {
                        self.error(
                            pos,
                            format!("blueprint invocations nested deeper than {MAX_CALL_DEPTH}"),
                        );
                        return;
                    }
                    let mut child_params: BTreeMap<String, String> =
                        blueprint.params.iter().cloned().collect();
                    for (key, value) in &attrs {
                        if key == "condition" {
                            continue;
                        }
                        if child_params.contains_key(key) {
                            child_params.insert(key.clone(), value.clone());
                        } else {
                            self.warning(
                                pos,
                                format!(
                                    "attribute {key:?} does not match a parameter of blueprint {other:?}"
                                ),
                            );
                        }
                    }
                    let steps = blueprint.steps.clone();
                    for child in &steps {
                        self.walk(child, &child_params, depth + 1, record_flow);
                    }
                }
            },
        }
    }

    fn check_comparison_value(
        &mut self,
        pos: SourcePos,
        quantity: &str,
        comparator: Option<Comparator>,
        value: &str,
    ) {
        use crate::platform::ColourClass;
        if quantity == "colour" {
            if ColourClass::parse(value.trim()).is_none() {
                self.error(
                    pos,
                    format!("comparison value {value:?} is not a colour class name"),
                );
            }
            if matches!(
                comparator,
                Some(Comparator::LessThan) | Some(Comparator::GreaterThan) | Some(Comparator::InRange)
            ) {
                self.error(pos, "colour measurements support only equal and not_equal");
            }
            return;
        }
        match comparator {
            Some(Comparator::InRange) => {
                let parsed = value.split_once("..").and_then(|(lo, hi)| {
                    let lo: f64 = lo.trim().parse().ok()?;
                    let hi: f64 = hi.trim().parse().ok()?;
                    (lo <= hi).then_some(())
                });
                if parsed.is_none() {
                    self.error(
                        pos,
                        format!("comparison value {value:?} is not a lo..hi range"),
                    );
                }
            }
            Some(_) => {
                if value.trim().parse::<f64>().is_err() {
                    self.error(pos, format!("comparison value {value:?} is not a number"));
                }
            }
            None => {}
        }
    }

    fn finish(mut self) -> Vec<ParseDiagnostic> {
        let mut first_definition: BTreeMap<&str, usize> = BTreeMap::new();
        let mut all_ids: BTreeSet<&str> = BTreeSet::new();
        for site in &self.measures {
            all_ids.insert(&site.step_id);
            let entry = first_definition.entry(&site.step_id).or_insert(site.visit);
            if site.visit < *entry {
                *entry = site.visit;
            }
        }
        let mut flow_diags = Vec::new();
        for (var, visit, pos) in &self.uses {
            if !all_ids.contains(var.as_str()) {
                flow_diags.push(ParseDiagnostic::warning(
                    *pos,
                    format!("condition variable {var:?} is never bound by a Measure"),
                ));
            } else if first_definition[var.as_str()] >= *visit {
                flow_diags.push(ParseDiagnostic::warning(
                    *pos,
                    format!("condition variable {var:?} is used before any Measure binds it"),
                ));
            }
        }
        self.diags.extend(flow_diags);

        let mut by_id: BTreeMap<&str, Vec<&MeasureSite>> = BTreeMap::new();
        for site in &self.measures {
            by_id.entry(&site.step_id).or_default().push(site);
        }
        let mut dup_diags = Vec::new();
        for (id, sites) in by_id {
            let unconditional: Vec<&&MeasureSite> =
                sites.iter().filter(|s| s.unconditional).collect();
            if unconditional.len() >= 2 {
                for site in &unconditional[1..] {
                    dup_diags.push(ParseDiagnostic::error(
                        site.pos,
                        format!("step_id {id:?} is measured unconditionally more than once"),
                    ));
                }
            }
        }
        self.diags.extend(dup_diags);
        self.diags
    }
}

/// Statically validates a document against a platform.
///
/// Returns an empty list when the document is clean. Errors mean the run
/// would fail; warnings flag likely authoring mistakes (variables that are
/// never measured, or measured only after their first use).
pub fn check(doc: &XdlDocument, platform: &Platform) -> Vec<ParseDiagnostic> {
    let doc = normalize(doc);
    let mut checker = Checker {
        doc: &doc,
        platform,
        diags: Vec::new(),
        visit: 0,
        measures: Vec::new(),
        uses: Vec::new(),
        invoked: BTreeSet::new(),
    };

    let mut seen_ids: BTreeSet<&str> = BTreeSet::new();
    for blueprint in &doc.blueprints {
        if BUILTINS.contains(&blueprint.id.as_str()) {
            let pos = blueprint.pos.unwrap_or(SourcePos { line: 0, column: 0 });
            checker.warning(
                pos,
                format!("blueprint {:?} shadows a built-in step name", blueprint.id),
            );
        }
        if !seen_ids.insert(&blueprint.id) {
            let pos = blueprint.pos.unwrap_or(SourcePos { line: 0, column: 0 });
            checker.error(pos, format!("duplicate blueprint id {:?}", blueprint.id));
        }
    }

    let empty = BTreeMap::new();
    for step in &doc.main_steps {
        checker.walk(step, &empty, 0, true);
    }

    for blueprint in &doc.blueprints {
        if !checker.invoked.contains(&blueprint.id) {
            let params: BTreeMap<String, String> = blueprint.params.iter().cloned().collect();
            for step in &blueprint.steps {
                checker.walk(step, &params, 1, false);
            }
        }
    }

    checker.finish()
}
