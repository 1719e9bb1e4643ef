//! Execution traces.
//!
//! Every step the runtime visits, executed or skipped, becomes one
//! [`TraceEvent`]. Traces serialise as JSON Lines: one event per line, in
//! sequence order, so long runs can be streamed and diffed.

use crate::platform::VesselSnapshot;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

/// One visited step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub step_name: String,
    /// Attribute values after parameter substitution.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    /// The raw condition text, when the step had one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_text: Option<String>,
    /// How that condition evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_value: Option<bool>,
    pub executed: bool,
    /// Store changes made by this step: `Some` for a fresh binding,
    /// `None` for a removal.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub store_delta: BTreeMap<String, Option<bool>>,
    /// Full deck snapshot, attached to iteration boundaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vessel_snapshot: Option<BTreeMap<String, VesselSnapshot>>,
}

impl TraceEvent {
    pub fn new(seq: u64, step_name: impl Into<String>) -> Self {
        TraceEvent {
            seq,
            step_name: step_name.into(),
            attributes: BTreeMap::new(),
            condition_text: None,
            condition_value: None,
            executed: true,
            store_delta: BTreeMap::new(),
            vessel_snapshot: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An ordered list of events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Writes the trace as JSON Lines.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), TraceError> {
        for event in &self.events {
            let line = serde_json::to_string(event).map_err(|source| TraceError::Malformed {
                line: event.seq as usize,
                source,
            })?;
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a trace back from JSON Lines. Blank lines are ignored.
    pub fn read_jsonl(input: impl BufRead) -> Result<Trace, TraceError> {
        let mut events = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line)
                .map_err(|source| TraceError::Malformed { line: idx + 1, source })?;
            events.push(event);
        }
        Ok(Trace { events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::ColourClass;

    #[test]
    fn events_round_trip_through_jsonl() {
        let mut trace = Trace::new();
        let mut e0 = TraceEvent::new(0, "Transfer");
        e0.attributes.insert("from".to_string(), "a".to_string());
        e0.attributes.insert("volume".to_string(), "5 mL".to_string());
        trace.events.push(e0);
        let mut e1 = TraceEvent::new(1, "Measure");
        e1.condition_text = Some("A and not B".to_string());
        e1.condition_value = Some(false);
        e1.executed = false;
        trace.events.push(e1);
        let mut e2 = TraceEvent::new(2, "ResetVariables");
        e2.store_delta.insert("A".to_string(), None);
        let mut snap = BTreeMap::new();
        snap.insert(
            "tape_1".to_string(),
            VesselSnapshot {
                colour: ColourClass::Orange,
                volume_ml: 5.0,
            },
        );
        e2.vessel_snapshot = Some(snap);
        trace.events.push(e2);

        let mut buffer = Vec::new();
        trace.write_jsonl(&mut buffer).unwrap();
        let text = String::from_utf8(buffer.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines() {
            assert!(line.starts_with("{\"seq\":"));
        }

        let reread = Trace::read_jsonl(&buffer[..]).unwrap();
        assert_eq!(reread, trace);
    }

    #[test]
    fn omitted_fields_stay_compact() {
        let mut trace = Trace::new();
        trace.events.push(TraceEvent::new(0, "Wait"));
        let mut buffer = Vec::new();
        trace.write_jsonl(&mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert_eq!(
            text.trim(),
            r#"{"seq":0,"step_name":"Wait","executed":true}"#
        );
    }

    #[test]
    fn blank_lines_are_ignored_and_garbage_is_rejected() {
        let ok = "\n{\"seq\":0,\"step_name\":\"Wait\",\"executed\":true}\n\n";
        assert_eq!(Trace::read_jsonl(ok.as_bytes()).unwrap().len(), 1);
        let bad = "{\"seq\":0,\"step_name\":\"Wait\",\"executed\":true}\nnot json\n";
        let err = Trace::read_jsonl(bad.as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 2, .. }));
    }
}
