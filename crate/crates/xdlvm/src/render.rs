//! Renders execution traces as step-by-step machine diagrams, one row
//! per loop iteration, in ASCII or SVG.
//!
//! Rows are keyed off the `ResetVariables` event at the top of each
//! iteration, whose vessel snapshot captures the deck before the
//! transition. Rendering is a pure function of the trace: identical
//! traces give identical output bytes.

use crate::platform::{ColourClass, VesselSnapshot};
use crate::trace::Trace;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("no transitions found")]
    NoTransitions,
    #[error("snapshot has no {0} vials")]
    MissingRow(&'static str),
}

struct MachineRow {
    tape: Vec<ColourClass>,
    head: Vec<ColourClass>,
    state: (ColourClass, ColourClass),
}

impl MachineRow {
    /// 1-based position of the single marked head vial, if unambiguous.
    fn head_position(&self) -> Option<usize> {
        let marked: Vec<usize> = self
            .head
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != ColourClass::White)
            .map(|(i, _)| i + 1)
            .collect();
        match marked.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }

    fn state_label(&self) -> String {
        let order = [
            ColourClass::White,
            ColourClass::Orange,
            ColourClass::Blue,
            ColourClass::Green,
        ];
        if self.state == (ColourClass::Green, ColourClass::Green) {
            return "HALT".to_string();
        }
        let position = |c: ColourClass| order.iter().position(|&o| o == c);
        match (position(self.state.0), position(self.state.1)) {
            (Some(a), Some(b)) => format!("S{}", a * 4 + b + 1),
            _ => "?".to_string(),
        }
    }
}

fn indexed_id(id: &str, prefix: &str) -> Option<u32> {
    id.strip_prefix(prefix).and_then(|rest| rest.parse().ok())
}

fn snapshot_row(snapshot: &BTreeMap<String, VesselSnapshot>) -> Result<MachineRow, RenderError> {
    let mut tape = Vec::new();
    let mut head = Vec::new();
    let mut state = BTreeMap::new();
    for (id, entry) in snapshot {
        if let Some(i) = indexed_id(id, "tape_") {
            tape.push((i, entry.colour));
        } else if let Some(i) = indexed_id(id, "head_") {
            head.push((i, entry.colour));
        } else if let Some(i) = indexed_id(id, "state_") {
            state.insert(i, entry.colour);
        }
    }
    if tape.is_empty() {
        return Err(RenderError::MissingRow("tape"));
    }
    let (s1, s2) = match (state.get(&1), state.get(&2)) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(RenderError::MissingRow("state")),
    };
    tape.sort_by_key(|(i, _)| *i);
    head.sort_by_key(|(i, _)| *i);
    Ok(MachineRow {
        tape: tape.into_iter().map(|(_, c)| c).collect(),
        head: head.into_iter().map(|(_, c)| c).collect(),
        state: (s1, s2),
    })
}

fn machine_rows(trace: &Trace) -> Result<Vec<MachineRow>, RenderError> {
    let mut rows = Vec::new();
    for event in &trace.events {
        if event.step_name != "ResetVariables" || !event.executed {
            continue;
        }
        if let Some(snapshot) = &event.vessel_snapshot {
            rows.push(snapshot_row(snapshot)?);
        }
    }
    if rows.is_empty() {
        return Err(RenderError::NoTransitions);
    }
    Ok(rows)
}

/// One text row per iteration: step index, tape as colour letters, head
/// position (`?` when zero or several vials are marked), state label.
pub fn render_ascii(trace: &Trace) -> Result<String, RenderError> {
    let rows = machine_rows(trace)?;
    let tape_width = rows
        .iter()
        .map(|r| r.tape.len())
        .max()
        .unwrap_or(0)
        .max("tape".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<tape_width$}  {:>4}  state", "step", "tape", "head");
    for (index, row) in rows.iter().enumerate() {
        let tape: String = row.tape.iter().map(|c| c.letter()).collect();
        let head = match row.head_position() {
            Some(p) => p.to_string(),
            None => "?".to_string(),
        };
        let _ = writeln!(
            out,
            "{index:>4}  {tape:<tape_width$}  {head:>4}  {}",
            row.state_label()
        );
    }
    Ok(out)
}

fn colour_hex(colour: ColourClass) -> String {
    match colour.reference_rgb() {
        Some([r, g, b]) => format!("#{r:02x}{g:02x}{b:02x}"),
        None => "#999999".to_string(),
    }
}

const CELL: usize = 22;
const GAP: usize = 4;
const MARGIN: usize = 12;
const ROW_LABEL: usize = 52;

/// One vial-grid block per iteration: head row above tape row, the two
/// state vials to the right, step index and state label as text.
pub fn render_svg(trace: &Trace) -> Result<String, RenderError> {
    let rows = machine_rows(trace)?;
    let cells = rows.iter().map(|r| r.tape.len()).max().unwrap_or(0);
    let block_height = CELL * 2 + GAP * 2;
    let state_x = MARGIN + ROW_LABEL + cells * CELL + GAP * cells.saturating_sub(1) + 3 * GAP;
    let width = state_x + 2 * CELL + GAP + ROW_LABEL + MARGIN;
    let height = MARGIN * 2 + rows.len() * block_height;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    for (index, row) in rows.iter().enumerate() {
        let top = MARGIN + index * block_height;
        let text_y = top + CELL + GAP / 2;
        let _ = writeln!(
            out,
            "<text x=\"{MARGIN}\" y=\"{text_y}\" fill=\"#333333\">{index:>3}</text>"
        );
        let vial = |out: &mut String, x: usize, y: usize, colour: ColourClass| {
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" rx=\"3\" \
                 fill=\"{}\" stroke=\"#333333\"/>",
                colour_hex(colour)
            );
        };
        for (i, colour) in row.head.iter().enumerate() {
            vial(&mut out, MARGIN + ROW_LABEL + i * (CELL + GAP), top, *colour);
        }
        for (i, colour) in row.tape.iter().enumerate() {
            vial(
                &mut out,
                MARGIN + ROW_LABEL + i * (CELL + GAP),
                top + CELL + GAP,
                *colour,
            );
        }
        vial(&mut out, state_x, top + CELL + GAP, row.state.0);
        vial(&mut out, state_x + CELL + GAP, top + CELL + GAP, row.state.1);
        let label_x = state_x + 2 * CELL + 2 * GAP;
        let label_y = top + CELL + GAP + CELL - GAP;
        let _ = writeln!(
            out,
            "<text x=\"{label_x}\" y=\"{label_y}\" fill=\"#333333\">{}</text>",
            row.state_label()
        );
    }
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceEvent;

    fn snapshot(
        tape: &[ColourClass],
        head: usize,
        state: (ColourClass, ColourClass),
    ) -> BTreeMap<String, VesselSnapshot> {
        let mut map = BTreeMap::new();
        for (i, colour) in tape.iter().enumerate() {
            map.insert(
                format!("tape_{}", i + 1),
                VesselSnapshot {
                    colour: *colour,
                    volume_ml: 5.0,
                },
            );
            map.insert(
                format!("head_{}", i + 1),
                VesselSnapshot {
                    colour: if i + 1 == head {
                        ColourClass::Orange
                    } else {
                        ColourClass::White
                    },
                    volume_ml: 5.0,
                },
            );
        }
        for (i, colour) in [state.0, state.1].iter().enumerate() {
            map.insert(
                format!("state_{}", i + 1),
                VesselSnapshot {
                    colour: *colour,
                    volume_ml: 5.0,
                },
            );
        }
        map
    }

    fn reset_event(seq: u64, snapshot: BTreeMap<String, VesselSnapshot>) -> TraceEvent {
        TraceEvent {
            seq,
            step_name: "ResetVariables".to_string(),
            attributes: BTreeMap::new(),
            condition_text: None,
            condition_value: None,
            executed: true,
            store_delta: BTreeMap::new(),
            vessel_snapshot: Some(snapshot),
        }
    }

    fn two_row_trace() -> Trace {
        use ColourClass::*;
        Trace {
            events: vec![
                reset_event(0, snapshot(&[White, Orange, Blue, Green], 2, (White, White))),
                reset_event(9, snapshot(&[Orange; 4], 4, (Green, Green))),
            ],
        }
    }

    #[test]
    fn ascii_lists_one_row_per_iteration() {
        let text = render_ascii(&two_row_trace()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("WOBG"));
        assert!(lines[1].contains("S1"));
        assert!(lines[1].trim_start().starts_with('0'));
        assert!(lines[2].contains("OOOO"));
        assert!(lines[2].contains("HALT"));
        assert!(lines[2].contains('4'));
    }

    #[test]
    fn ascii_marks_ambiguous_heads() {
        use ColourClass::*;
        let mut snap = snapshot(&[White, White], 1, (White, Orange));
        snap.get_mut("head_2").unwrap().colour = Orange;
        let trace = Trace {
            events: vec![reset_event(0, snap)],
        };
        let text = render_ascii(&trace).unwrap();
        assert!(text.lines().nth(1).unwrap().contains('?'));
        assert!(text.contains("S2"));
    }

    #[test]
    fn empty_trace_fails_with_no_transitions() {
        let trace = Trace { events: Vec::new() };
        assert_eq!(render_ascii(&trace).unwrap_err(), RenderError::NoTransitions);
        assert_eq!(render_svg(&trace).unwrap_err(), RenderError::NoTransitions);
    }

    #[test]
    fn skipped_or_snapshotless_events_produce_no_rows() {
        let mut event = reset_event(0, snapshot(&[ColourClass::White], 1, (ColourClass::White, ColourClass::White)));
        event.vessel_snapshot = None;
        let trace = Trace {
            events: vec![event],
        };
        assert_eq!(render_ascii(&trace).unwrap_err(), RenderError::NoTransitions);
    }

    #[test]
    fn svg_is_deterministic_and_uses_the_palette() {
        let trace = two_row_trace();
        let first = render_svg(&trace).unwrap();
        let second = render_svg(&trace).unwrap();
        assert_eq!(first, second);
        assert!(first.starts_with("<svg "));
        assert!(first.trim_end().ends_with("</svg>"));
        for hex in ["#f5f5f5", "#e68c1e", "#2850c8", "#28a046"] {
            assert!(first.contains(hex), "missing {hex}");
        }
        assert!(first.contains("HALT"));
        // Two blocks of (4 head + 4 tape + 2 state) vials.
        assert_eq!(first.matches("<rect").count(), 1 + 20);
    }

    #[test]
    fn unknown_colours_render_grey_and_unlabelled() {
        use ColourClass::*;
        let trace = Trace {
            events: vec![reset_event(
                0,
                snapshot(&[Unknown, White], 1, (Unknown, White)),
            )],
        };
        let text = render_ascii(&trace).unwrap();
        assert!(text.contains("UW"));
        assert!(text.lines().nth(1).unwrap().ends_with('?'));
        let svg = render_svg(&trace).unwrap();
        assert!(svg.contains("#999999"));
    }
}
