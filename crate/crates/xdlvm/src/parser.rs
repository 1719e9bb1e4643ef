//! Parser for the XDL document syntax and the condition expression grammar.
//!
//! The document syntax is a small XML subset: elements with double-quoted
//! attributes, self-closing tags, nesting, `<!-- -->` comments and the four
//! entities `&amp;` `&lt;` `&gt;` `&quot;`. There are no namespaces,
//! processing instructions or text nodes. Parsing is all-or-nothing: any
//! error yields diagnostics and no document.
//!
//! Condition strings use a boolean grammar with case-insensitive keywords
//! (`or` binds loosest, then `and`, then unary `not`) over case-sensitive
//! identifiers, `true`, `false` and parentheses. `and`/`or` associate left.

use crate::ast::{
    normalize, Attributes, Blueprint, ConditionExpr, SourcePos, Step, XdlDocument,
};
use std::fmt;

/// Maximum element or expression nesting depth accepted by the parsers.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Error => write!(f, "error"),
            Severity::Warning => write!(f, "warning"),
        }
    }
}

/// A positioned parser or checker message.
///
/// `line` and `column` are 1-based. Rendered as `line:col: severity: message`;
/// front ends prepend the file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub line: u32,
    pub column: u32,
    pub message: String,
    pub severity: Severity,
}

impl ParseDiagnostic {
    pub fn error(pos: SourcePos, message: impl Into<String>) -> Self {
        ParseDiagnostic {
            line: pos.line,
            column: pos.column,
            message: message.into(),
            severity: Severity::Error,
        }
    }

    pub fn warning(pos: SourcePos, message: impl Into<String>) -> Self {
        ParseDiagnostic {
            line: pos.line,
            column: pos.column,
            message: message.into(),
            severity: Severity::Warning,
        }
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {}: {}",
            self.line, self.column, self.severity, self.message
        )
    }
}

// ---------------------------------------------------------------------------
// Condition expressions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum CondToken {
    Ident(String),
    True,
    False,
    And,
    Or,
    Not,
    LParen,
    RParen,
}

struct CondLexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
}

impl<'a> CondLexer<'a> {
    fn new(src: &'a str) -> Self {
        CondLexer {
            chars: src.char_indices().peekable(),
            src,
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, CondToken)>, (usize, String)> {
        let mut out = Vec::new();
        while let Some(&(idx, ch)) = self.chars.peek() {
            if ch.is_whitespace() {
                self.chars.next();
                continue;
            }
            if ch == '(' {
                self.chars.next();
                out.push((idx, CondToken::LParen));
                continue;
            }
            if ch == ')' {
                self.chars.next();
                out.push((idx, CondToken::RParen));
                continue;
            }
            if ch.is_ascii_alphabetic() || ch == '_' {
                let start = idx;
                let mut end = idx;
                while let Some(&(i, c)) = self.chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        end = i + c.len_utf8();
                        self.chars.next();
                    } else {
                        break;
                    }
                }
                let word = &self.src[start..end];
                let token = if word.eq_ignore_ascii_case("and") {
                    CondToken::And
                } else if word.eq_ignore_ascii_case("or") {
                    CondToken::Or
                } else if word.eq_ignore_ascii_case("not") {
                    CondToken::Not
                } else if word.eq_ignore_ascii_case("true") {
                    CondToken::True
                } else if word.eq_ignore_ascii_case("false") {
                    CondToken::False
                } else {
                    CondToken::Ident(word.to_string())
                };
                out.push((start, token));
                continue;
            }
            return Err((idx, format!("unexpected character {ch:?} in condition")));
        }
        Ok(out)
    }
}

struct CondParser {
    tokens: Vec<(usize, CondToken)>,
    pos: usize,
    src_len: usize,
}

impl CondParser {
    fn peek(&self) -> Option<&CondToken> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(o, _)| *o)
            .unwrap_or(self.src_len)
    }

    fn bump(&mut self) -> Option<CondToken> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn parse_or(&mut self, depth: usize) -> Result<ConditionExpr, (usize, String)> {
        let mut left = self.parse_and(depth)?;
        while matches!(self.peek(), Some(CondToken::Or)) {
            self.bump();
            let right = self.parse_and(depth)?;
            left = ConditionExpr::or(left, right);
        }
        Ok(left)
    }

    fn parse_and(&mut self, depth: usize) -> Result<ConditionExpr, (usize, String)> {
        let mut left = self.parse_unary(depth)?;
        while matches!(self.peek(), Some(CondToken::And)) {
            self.bump();
            let right = self.parse_unary(depth)?;
            left = ConditionExpr::and(left, right);
        }
        Ok(left)
    }

    fn parse_unary(&mut self, depth: usize) -> Result<ConditionExpr, (usize, String)> {
        if depth > MAX_DEPTH {
            return Err((
                self.offset(),
                format!("condition nesting exceeds depth {MAX_DEPTH}"),
            ));
        }
        if matches!(self.peek(), Some(CondToken::Not)) {
            self.bump();
            let inner = self.parse_unary(depth + 1)?;
            return Ok(ConditionExpr::not(inner));
        }
        self.parse_atom(depth)
    }

    fn parse_atom(&mut self, depth: usize) -> Result<ConditionExpr, (usize, String)> {
        let offset = self.offset();
        match self.bump() {
            Some(CondToken::Ident(name)) => Ok(ConditionExpr::Var(name)),
            Some(CondToken::True) => Ok(ConditionExpr::Literal(true)),
            Some(CondToken::False) => Ok(ConditionExpr::Literal(false)),
            Some(CondToken::LParen) => {
                let inner = self.parse_or(depth + 1)?;
                match self.bump() {
                    Some(CondToken::RParen) => Ok(inner),
                    _ => Err((self.offset(), "expected ')'".to_string())),
                }
            }
            Some(other) => Err((offset, format!("unexpected token {other:?}"))),
            None => Err((offset, "unexpected end of condition".to_string())),
        }
    }
}

/// Parses a condition string into an expression tree.
///
/// The diagnostic position is relative to the string itself: line 1, column
/// at the offending character.
pub fn parse_condition(text: &str) -> Result<ConditionExpr, ParseDiagnostic> {
    parse_condition_inner(text).map_err(|(offset, message)| {
        let column = text[..offset.min(text.len())].chars().count() as u32 + 1;
        ParseDiagnostic::error(SourcePos::new(1, column), message)
    })
}

fn parse_condition_inner(text: &str) -> Result<ConditionExpr, (usize, String)> {
    let tokens = CondLexer::new(text).tokens()?;
    if tokens.is_empty() {
        return Err((0, "empty condition".to_string()));
    }
    let mut parser = CondParser {
        tokens,
        pos: 0,
        src_len: text.len(),
    };
    let expr = parser.parse_or(0)?;
    if parser.peek().is_some() {
        return Err((
            parser.offset(),
            "unexpected trailing input in condition".to_string(),
        ));
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// XML subset scanner
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct RawElement {
    name: String,
    attrs: Vec<(String, String, SourcePos)>,
    children: Vec<RawElement>,
    pos: SourcePos,
}

impl RawElement {
    fn attr(&self, key: &str) -> Option<(&str, SourcePos)> {
        self.attrs
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, p)| (v.as_str(), *p))
    }
}

struct Scanner {
    chars: Vec<char>,
    idx: usize,
    line: u32,
    column: u32,
}

impl Scanner {
    fn new(src: &str) -> Self {
        Scanner {
            chars: src.chars().collect(),
            idx: 0,
            line: 1,
            column: 1,
        }
    }

    fn pos(&self) -> SourcePos {
        SourcePos::new(self.line, self.column)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.idx).copied()
    }

    fn peek_at(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.idx + ahead).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.idx).copied()?;
        self.idx += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars()
            .enumerate()
            .all(|(i, c)| self.peek_at(i) == Some(c))
    }

    fn skip_n(&mut self, n: usize) {
        for _ in 0..n {
            self.bump();
        }
    }

    fn err(&self, message: impl Into<String>) -> ParseDiagnostic {
        ParseDiagnostic::error(self.pos(), message)
    }

    fn skip_ws_and_comments(&mut self) -> Result<(), ParseDiagnostic> {
        loop {
            while matches!(self.peek(), Some(c) if c.is_whitespace()) {
                self.bump();
            }
            if self.starts_with("<!--") {
                let start = self.pos();
                self.skip_n(4);
                loop {
                    if self.starts_with("-->") {
                        self.skip_n(3);
                        break;
                    }
                    if self.bump().is_none() {
                        return Err(ParseDiagnostic::error(start, "unterminated comment"));
                    }
                }
                continue;
            }
            return Ok(());
        }
    }

    fn read_name(&mut self) -> Result<String, ParseDiagnostic> {
        let mut name = String::new();
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                name.push(c);
                self.bump();
            }
            Some(c) => return Err(self.err(format!("invalid name start {c:?}"))),
            None => return Err(self.err("unexpected end of input")),
        }
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                name.push(c);
                self.bump();
            } else {
                break;
            }
        }
        Ok(name)
    }

    fn read_entity(&mut self) -> Result<char, ParseDiagnostic> {
        let start = self.pos();
        self.bump();
        let mut entity = String::new();
        loop {
            match self.peek() {
                Some(';') => {
                    self.bump();
                    break;
                }
                Some(c) if c.is_ascii_alphabetic() => {
                    entity.push(c);
                    self.bump();
                    if entity.len() > 8 {
                        return Err(ParseDiagnostic::error(start, "unknown entity"));
                    }
                }
                _ => return Err(ParseDiagnostic::error(start, "unterminated entity")),
            }
        }
        match entity.as_str() {
            "amp" => Ok('&'),
            "lt" => Ok('<'),
            "gt" => Ok('>'),
            "quot" => Ok('"'),
            other => Err(ParseDiagnostic::error(
                start,
                format!("unknown entity &{other};"),
            )),
        }
    }

    fn read_attr_value(&mut self) -> Result<String, ParseDiagnostic> {
        let start = self.pos();
        match self.peek() {
            Some('"') => {
                self.bump();
            }
            _ => return Err(self.err("expected '\"' to open attribute value")),
        }
        let mut value = String::new();
        loop {
            match self.peek() {
                Some('"') => {
                    self.bump();
                    return Ok(value);
                }
                Some('&') => value.push(self.read_entity()?),
                Some('<') => {
                    return Err(self.err("'<' is not allowed in attribute values"));
                }
                Some(c) => {
                    value.push(c);
                    self.bump();
                }
                None => {
                    return Err(ParseDiagnostic::error(start, "unterminated attribute value"))
                }
            }
        }
    }

    /// Parses one element, assuming the scanner sits on `<`.
    fn read_element(&mut self, depth: usize) -> Result<RawElement, ParseDiagnostic> {
        if depth > MAX_DEPTH {
            return Err(self.err(format!("element nesting exceeds depth {MAX_DEPTH}")));
        }
        let pos = self.pos();
        self.bump();
        let name = self.read_name()?;
        let mut attrs: Vec<(String, String, SourcePos)> = Vec::new();
        loop {
            let had_ws = matches!(self.peek(), Some(c) if c.is_whitespace());
            while matches!(self.peek(), Some(c) if c.is_whitespace()) {
                self.bump();
            }
            match self.peek() {
                Some('/') => {
                    self.bump();
                    match self.peek() {
                        Some('>') => {
                            self.bump();
                            return Ok(RawElement {
                                name,
                                attrs,
                                children: Vec::new(),
                                pos,
                            });
                        }
                        _ => return Err(self.err("expected '>' after '/'")),
                    }
                }
                Some('>') => {
                    self.bump();
                    let children = self.read_children(&name, depth)?;
                    return Ok(RawElement {
                        name,
                        attrs,
                        children,
                        pos,
                    });
                }
                Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                    if !had_ws {
                        return Err(self.err("expected whitespace before attribute"));
                    }
                    let attr_pos = self.pos();
                    let key = self.read_name()?;
                    while matches!(self.peek(), Some(c) if c.is_whitespace()) {
                        self.bump();
                    }
                    match self.peek() {
                        Some('=') => {
                            self.bump();
                        }
                        _ => return Err(self.err(format!("expected '=' after attribute {key:?}"))),
                    }
                    while matches!(self.peek(), Some(c) if c.is_whitespace()) {
                        self.bump();
                    }
                    let value = self.read_attr_value()?;
                    if attrs.iter().any(|(k, _, _)| *k == key) {
                        return Err(ParseDiagnostic::error(
                            attr_pos,
                            format!("duplicate attribute {key:?}"),
                        ));
                    }
                    attrs.push((key, value, attr_pos));
                }
                Some(c) => return Err(self.err(format!("unexpected character {c:?} in tag"))),
                None => return Err(self.err("unexpected end of input inside tag")),
            }
        }
    }

    fn read_children(
        &mut self,
        parent: &str,
        depth: usize,
    ) -> Result<Vec<RawElement>, ParseDiagnostic> {
        let mut children = Vec::new();
        loop {
            self.skip_ws_and_comments()?;
            match self.peek() {
                Some('<') => {
                    if self.peek_at(1) == Some('/') {
                        let close_pos = self.pos();
                        self.skip_n(2);
                        let name = self.read_name()?;
                        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
                            self.bump();
                        }
                        match self.peek() {
                            Some('>') => {
                                self.bump();
                            }
                            _ => return Err(self.err("expected '>' in closing tag")),
                        }
                        if name != parent {
                            return Err(ParseDiagnostic::error(
                                close_pos,
                                format!("closing tag </{name}> does not match <{parent}>"),
                            ));
                        }
                        return Ok(children);
                    }
                    children.push(self.read_element(depth + 1)?);
                }
                Some(_) => {
                    return Err(self.err("text content is not allowed"));
                }
                None => {
                    return Err(self.err(format!("unexpected end of input, <{parent}> not closed")));
                }
            }
        }
    }

    fn read_document(&mut self) -> Result<Vec<RawElement>, ParseDiagnostic> {
        if self.peek() == Some('\u{feff}') {
            self.bump();
        }
        let mut elements = Vec::new();
        loop {
            self.skip_ws_and_comments()?;
            match self.peek() {
                Some('<') => {
                    if self.peek_at(1) == Some('/') {
                        return Err(self.err("unmatched closing tag"));
                    }
                    elements.push(self.read_element(0)?);
                }
                Some(_) => return Err(self.err("text content is not allowed")),
                None => return Ok(elements),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Document assembly
// ---------------------------------------------------------------------------

fn build_step(elem: &RawElement, diags: &mut Vec<ParseDiagnostic>) -> Step {
    let mut name = elem.name.clone();
    if name == "Monitor" {
        name = "Measure".to_string();
    }
    if elem.name == "Blueprint" {
        diags.push(ParseDiagnostic::error(
            elem.pos,
            "Blueprint definitions are only allowed at the top level",
        ));
    }
    let mut attributes = Attributes::new();
    let mut condition = None;
    for (key, value, attr_pos) in &elem.attrs {
        attributes.insert(key.clone(), value.clone());
        if key == "condition" || key == "while_condition" {
            match parse_condition(value) {
                Ok(expr) => {
                    if key == "condition" {
                        condition = Some(expr);
                    }
                }
                Err(inner) => diags.push(ParseDiagnostic::error(
                    *attr_pos,
                    format!("malformed {key}: {}", inner.message),
                )),
            }
        }
    }
    if !elem.children.is_empty() && name != "Repeat" {
        diags.push(ParseDiagnostic::error(
            elem.pos,
            format!("children are only allowed on Repeat steps, not <{}>", elem.name),
        ));
    }
    let children = elem
        .children
        .iter()
        .map(|child| build_step(child, diags))
        .collect();
    Step {
        name,
        attributes,
        condition,
        children,
        pos: Some(elem.pos),
    }
}

fn build_blueprint(elem: &RawElement, diags: &mut Vec<ParseDiagnostic>) -> Option<Blueprint> {
    let id = match elem.attr("id") {
        Some((value, _)) if !value.is_empty() => value.to_string(),
        Some((_, pos)) => {
            diags.push(ParseDiagnostic::error(pos, "blueprint id must be non-empty"));
            return None;
        }
        None => {
            diags.push(ParseDiagnostic::error(
                elem.pos,
                "Blueprint element is missing an id attribute",
            ));
            return None;
        }
    };
    let params = elem
        .attrs
        .iter()
        .filter(|(k, _, _)| k != "id")
        .map(|(k, v, _)| (k.clone(), v.clone()))
        .collect();
    let steps = elem
        .children
        .iter()
        .map(|child| build_step(child, diags))
        .collect();
    Some(Blueprint {
        id,
        params,
        steps,
        pos: Some(elem.pos),
    })
}

/// Parses a full document. All errors are collected; any error means no
/// document is produced.
pub fn parse_document(text: &str) -> Result<XdlDocument, Vec<ParseDiagnostic>> {
    let mut scanner = Scanner::new(text);
    let elements = scanner.read_document().map_err(|d| vec![d])?;
    let mut diags = Vec::new();
    let mut doc = XdlDocument::default();
    for elem in &elements {
        if elem.name == "Blueprint" {
            if let Some(bp) = build_blueprint(elem, &mut diags) {
                if doc.blueprints.iter().any(|b| b.id == bp.id) {
                    diags.push(ParseDiagnostic::error(
                        elem.pos,
                        format!("duplicate blueprint id {:?}", bp.id),
                    ));
                } else {
                    doc.blueprints.push(bp);
                }
            }
        } else {
            doc.main_steps.push(build_step(elem, &mut diags));
        }
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(diags);
    }
    Ok(normalize(&doc))
}

// ---------------------------------------------------------------------------
// Canonical serializer
// ---------------------------------------------------------------------------

fn escape_attr(value: &str, out: &mut String) {
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            other => out.push(other),
        }
    }
}

fn write_step(step: &Step, indent: usize, out: &mut String) {
    for _ in 0..indent {
        out.push_str("  ");
    }
    out.push('<');
    out.push_str(&step.name);
    for (key, value) in step.attributes.iter() {
        out.push(' ');
        out.push_str(key);
        out.push_str("=\"");
        escape_attr(value, out);
        out.push('"');
    }
    if step.children.is_empty() {
        out.push_str("/>\n");
    } else {
        out.push_str(">\n");
        for child in &step.children {
            write_step(child, indent + 1, out);
        }
        for _ in 0..indent {
            out.push_str("  ");
        }
        out.push_str("</");
        out.push_str(&step.name);
        out.push_str(">\n");
    }
}

/// Serializes a document back to XDL text. Parsing the output reproduces the
/// document (source positions aside).
pub fn document_to_xml(doc: &XdlDocument) -> String {
    let mut out = String::new();
    for bp in &doc.blueprints {
        out.push_str("<Blueprint id=\"");
        escape_attr(&bp.id, &mut out);
        out.push('"');
        for (key, value) in &bp.params {
            out.push(' ');
            out.push_str(key);
            out.push_str("=\"");
            escape_attr(value, &mut out);
            out.push('"');
        }
        if bp.steps.is_empty() {
            out.push_str("/>\n");
        } else {
            out.push_str(">\n");
            for step in &bp.steps {
                write_step(step, 1, &mut out);
            }
            out.push_str("</Blueprint>\n");
        }
    }
    for step in &doc.main_steps {
        write_step(step, 0, &mut out);
    }
    out
}
