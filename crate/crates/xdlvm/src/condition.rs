//! Evaluation of measurement conditions.
//!
//! `Measure` steps compare a sensor reading against a target and bind the
//! boolean outcome to the step's `step_id`. Conditions reference those
//! bindings by name. The store is strictly two-valued: a variable is `true`,
//! `false`, or absent, and evaluating an absent variable is an error rather
//! than a third truth value.

use crate::ast::ConditionExpr;
use crate::platform::ColourClass;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Unit tag carried by numeric measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Celsius,
    Ph,
    Millilitres,
    Unitless,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Celsius => write!(f, "°C"),
            Unit::Ph => write!(f, "pH"),
            Unit::Millilitres => write!(f, "mL"),
            Unit::Unitless => Ok(()),
        }
    }
}

/// A value produced by a measurement step.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasuredValue {
    Colour(ColourClass),
    Number { value: f64, unit: Unit },
}

impl MeasuredValue {
    pub fn number(value: f64, unit: Unit) -> Self {
        MeasuredValue::Number { value, unit }
    }

    fn kind(&self) -> &'static str {
        match self {
            MeasuredValue::Colour(_) => "colour",
            MeasuredValue::Number { .. } => "number",
        }
    }
}

impl fmt::Display for MeasuredValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasuredValue::Colour(c) => write!(f, "{c}"),
            MeasuredValue::Number { value, unit } => {
                write!(f, "{value}")?;
                if *unit != Unit::Unitless {
                    write!(f, " {unit}")?;
                }
                Ok(())
            }
        }
    }
}

/// Comparison kinds accepted in a `true_if` attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Equal,
    NotEqual,
    LessThan,
    GreaterThan,
    InRange,
}

impl Comparator {
    pub fn parse(text: &str) -> Option<Comparator> {
        match text {
            "equal" => Some(Comparator::Equal),
            "not_equal" => Some(Comparator::NotEqual),
            "less_than" => Some(Comparator::LessThan),
            "greater_than" => Some(Comparator::GreaterThan),
            "in_range" => Some(Comparator::InRange),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Comparator::Equal => "equal",
            Comparator::NotEqual => "not_equal",
            Comparator::LessThan => "less_than",
            Comparator::GreaterThan => "greater_than",
            Comparator::InRange => "in_range",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error("variable {0:?} is not defined")]
    UndefinedVariable(String),
    #[error("comparator {comparator} cannot be applied to a {kind} value")]
    ComparatorMismatch {
        comparator: Comparator,
        kind: &'static str,
    },
    #[error("comparison value {text:?} does not parse as a {expected}")]
    UnparseableComparisonValue { text: String, expected: &'static str },
}

/// Mapping from measurement step ids to boolean outcomes.
///
/// Rebinding an existing name replaces the value: the most recent
/// measurement wins, which is what lets a loop re-measure the same step ids
/// on every iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariableStore {
    bindings: BTreeMap<String, bool>,
}

impl VariableStore {
    pub fn new() -> Self {
        VariableStore::default()
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        self.bindings.get(name).copied()
    }

    pub fn clear(&mut self) {
        self.bindings.clear();
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, bool)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Binds `step_id` to `value`, replacing any existing binding.
pub fn bind(store: &mut VariableStore, step_id: &str, value: bool) {
    store.bindings.insert(step_id.to_string(), value);
}

/// Evaluates a condition against the store. Every referenced variable must
/// be bound.
pub fn evaluate(expr: &ConditionExpr, store: &VariableStore) -> Result<bool, ConditionError> {
    match expr {
        ConditionExpr::Var(name) => store
            .get(name)
            .ok_or_else(|| ConditionError::UndefinedVariable(name.clone())),
        ConditionExpr::Literal(v) => Ok(*v),
        ConditionExpr::Not(inner) => Ok(!evaluate(inner, store)?),
        // Both operands are checked even when the left one decides the
        // result: an unbound variable is an error wherever it hides.
        ConditionExpr::And(a, b) => {
            let left = evaluate(a, store)?;
            let right = evaluate(b, store)?;
            Ok(left && right)
        }
        ConditionExpr::Or(a, b) => {
            let left = evaluate(a, store)?;
            let right = evaluate(b, store)?;
            Ok(left || right)
        }
    }
}

fn parse_number(text: &str, expected: &'static str) -> Result<f64, ConditionError> {
    let value: f64 = text
        .trim()
        .parse()
        .map_err(|_| ConditionError::UnparseableComparisonValue {
            text: text.to_string(),
            expected,
        })?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ConditionError::UnparseableComparisonValue {
            text: text.to_string(),
            expected,
        })
    }
}

fn parse_range(text: &str) -> Result<(f64, f64), ConditionError> {
    let (lo, hi) = text
        .split_once("..")
        .ok_or_else(|| ConditionError::UnparseableComparisonValue {
            text: text.to_string(),
            expected: "range of the form lo..hi",
        })?;
    let lo = parse_number(lo, "range of the form lo..hi")?;
    let hi = parse_number(hi, "range of the form lo..hi")?;
    if lo > hi {
        return Err(ConditionError::UnparseableComparisonValue {
            text: text.to_string(),
            expected: "range with low bound not above high bound",
        });
    }
    Ok((lo, hi))
}

/// Compares a measured value against a textual target.
///
/// Colour values support `equal` and `not_equal` with a colour-class name as
/// the target. Numbers support all comparators; `in_range` takes an
/// inclusive `lo..hi` range.
pub fn compare(
    value: &MeasuredValue,
    true_if: Comparator,
    comparison_value: &str,
) -> Result<bool, ConditionError> {
    match value {
        MeasuredValue::Colour(colour) => {
            let target = ColourClass::parse(comparison_value.trim()).ok_or_else(|| {
                ConditionError::UnparseableComparisonValue {
                    text: comparison_value.to_string(),
                    expected: "colour class name",
                }
            })?;
            match true_if {
                Comparator::Equal => Ok(*colour == target),
                Comparator::NotEqual => Ok(*colour != target),
                other => Err(ConditionError::ComparatorMismatch {
                    comparator: other,
                    kind: value.kind(),
                }),
            }
        }
        MeasuredValue::Number { value: n, .. } => match true_if {
            Comparator::Equal => Ok(*n == parse_number(comparison_value, "number")?),
            Comparator::NotEqual => Ok(*n != parse_number(comparison_value, "number")?),
            Comparator::LessThan => Ok(*n < parse_number(comparison_value, "number")?),
            Comparator::GreaterThan => Ok(*n > parse_number(comparison_value, "number")?),
            Comparator::InRange => {
                let (lo, hi) = parse_range(comparison_value)?;
                Ok(lo <= *n && *n <= hi)
            }
        },
    }
}
