//! Document model for the conditional XDL dialect.
//!
//! A document is a flat list of blueprint definitions followed by main steps.
//! Steps are stringly typed: every attribute is kept as a `(key, value)`
//! string pair so unknown step kinds survive a parse/serialize round trip.
//! Condition strings are parsed into [`ConditionExpr`] trees up front; the
//! rest of an attribute value is interpreted by whoever executes the step.

use std::fmt;

/// Line/column pair (1-based) pointing into the source a step came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourcePos {
    pub line: u32,
    pub column: u32,
}

impl SourcePos {
    pub fn new(line: u32, column: u32) -> Self {
        SourcePos { line, column }
    }
}

/// Ordered attribute list with unique keys.
///
/// Order is the order of first insertion, which keeps serialization stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Attributes {
    entries: Vec<(String, String)>,
}

impl Attributes {
    pub fn new() -> Self {
        Attributes::default()
    }

    /// Inserts a key/value pair. Replaces the value in place if the key is
    /// already present and returns the old value.
    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) -> Option<String> {
        let key = key.into();
        let value = value.into();
        for entry in &mut self.entries {
            if entry.0 == key {
                return Some(std::mem::replace(&mut entry.1, value));
            }
        }
        self.entries.push((key, value));
        None
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<(String, String)> for Attributes {
    fn from_iter<T: IntoIterator<Item = (String, String)>>(iter: T) -> Self {
        let mut attrs = Attributes::new();
        for (k, v) in iter {
            attrs.insert(k, v);
        }
        attrs
    }
}

/// Boolean expression over measurement variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionExpr {
    /// A variable bound by a `Measure` step's `step_id`.
    Var(String),
    Not(Box<ConditionExpr>),
    And(Box<ConditionExpr>, Box<ConditionExpr>),
    Or(Box<ConditionExpr>, Box<ConditionExpr>),
    Literal(bool),
}

impl ConditionExpr {
    pub fn var(name: impl Into<String>) -> Self {
        ConditionExpr::Var(name.into())
    }

    pub fn not(e: ConditionExpr) -> Self {
        ConditionExpr::Not(Box::new(e))
    }

    pub fn and(a: ConditionExpr, b: ConditionExpr) -> Self {
        ConditionExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: ConditionExpr, b: ConditionExpr) -> Self {
        ConditionExpr::Or(Box::new(a), Box::new(b))
    }

    /// Collects every variable name referenced in the expression.
    pub fn variables<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ConditionExpr::Var(name) => out.push(name),
            ConditionExpr::Not(inner) => inner.variables(out),
            ConditionExpr::And(a, b) | ConditionExpr::Or(a, b) => {
                a.variables(out);
                b.variables(out);
            }
            ConditionExpr::Literal(_) => {}
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            ConditionExpr::Or(..) => 0,
            ConditionExpr::And(..) => 1,
            ConditionExpr::Not(..) => 2,
            ConditionExpr::Var(_) | ConditionExpr::Literal(_) => 3,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < min;
        if parens {
            write!(f, "(")?;
        }
        match self {
            ConditionExpr::Var(name) => write!(f, "{name}")?,
            ConditionExpr::Literal(true) => write!(f, "true")?,
            ConditionExpr::Literal(false) => write!(f, "false")?,
            ConditionExpr::Not(inner) => {
                write!(f, "not ")?;
                inner.fmt_prec(f, 2)?;
            }
            ConditionExpr::And(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " and ")?;
                b.fmt_prec(f, 2)?;
            }
            ConditionExpr::Or(a, b) => {
                a.fmt_prec(f, 0)?;
                write!(f, " or ")?;
                b.fmt_prec(f, 1)?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for ConditionExpr {
    /// Canonical text form: lower-case keywords, minimal parentheses,
    /// left-associative chains rendered flat.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// One step of a procedure.
///
/// `children` is only populated for container steps (`Repeat`); the parser
/// rejects children elsewhere. `condition` holds the parsed form of the
/// `condition` attribute; the raw string stays in `attributes` so documents
/// serialize back out unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub name: String,
    pub attributes: Attributes,
    pub condition: Option<ConditionExpr>,
    pub children: Vec<Step>,
    pub pos: Option<SourcePos>,
}

impl Step {
    pub fn new(name: impl Into<String>) -> Self {
        Step {
            name: name.into(),
            attributes: Attributes::new(),
            condition: None,
            children: Vec::new(),
            pos: None,
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key, value);
        self
    }

    pub fn with_condition(mut self, expr: ConditionExpr) -> Self {
        self.attributes.insert("condition", expr.to_string());
        self.condition = Some(expr);
        self
    }

    pub fn with_children(mut self, children: Vec<Step>) -> Self {
        self.children = children;
        self
    }
}

/// A named, parameterised sub-procedure.
///
/// Parameters are declared as attributes on the defining element; the
/// attribute value doubles as the parameter's default. Parameter values are
/// substituted for `$name` references in attribute values when the blueprint
/// is invoked.
#[derive(Debug, Clone, PartialEq)]
pub struct Blueprint {
    pub id: String,
    pub params: Vec<(String, String)>,
    pub steps: Vec<Step>,
    pub pos: Option<SourcePos>,
}

impl Blueprint {
    pub fn param_default(&self, name: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}

/// A parsed procedure document: blueprint definitions plus the main sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct XdlDocument {
    pub blueprints: Vec<Blueprint>,
    pub main_steps: Vec<Step>,
}

impl XdlDocument {
    pub fn blueprint(&self, id: &str) -> Option<&Blueprint> {
        self.blueprints.iter().find(|b| b.id == id)
    }
}

fn normalize_step(step: &Step) -> Step {
    let attributes = step
        .attributes
        .iter()
        .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
        .collect();
    Step {
        name: step.name.clone(),
        attributes,
        condition: step.condition.clone(),
        children: step.children.iter().map(normalize_step).collect(),
        pos: step.pos,
    }
}

/// Returns a copy of the document with attribute keys lower-cased and
/// attribute values whitespace-trimmed. Step names, blueprint ids and
/// parameter names are left alone. Idempotent.
pub fn normalize(doc: &XdlDocument) -> XdlDocument {
    XdlDocument {
        blueprints: doc
            .blueprints
            .iter()
            .map(|b| Blueprint {
                id: b.id.clone(),
                params: b.params.clone(),
                steps: b.steps.iter().map(normalize_step).collect(),
                pos: b.pos,
            })
            .collect(),
        main_steps: doc.main_steps.iter().map(normalize_step).collect(),
    }
}
