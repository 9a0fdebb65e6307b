//! Plain-text event lists: one event per line,
//! `time_beats voice velocity [pitch]`, whitespace separated.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;

use super::event::GridEvent;
use crate::error::{Error, Result};

pub fn parse_event_line(line: &str, lineno: usize) -> Result<Option<GridEvent>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split_whitespace().collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(Error::parse(
            format!("line {lineno}"),
            format!("expected 3 or 4 fields, found {}", fields.len()),
        ));
    }
    let field = |name: &str| format!("line {lineno}: {name}");
    let time_beats: f64 = fields[0]
        .parse()
        .map_err(|e| Error::parse(field("time_beats"), format!("{e}")))?;
    let voice: usize = fields[1]
        .parse()
        .map_err(|e| Error::parse(field("voice"), format!("{e}")))?;
    let velocity: f64 = fields[2]
        .parse()
        .map_err(|e| Error::parse(field("velocity"), format!("{e}")))?;
    let pitch = match fields.get(3) {
        Some(p) => Some(
            p.parse::<u8>()
                .ok()
                .filter(|&p| p <= 127)
                .ok_or_else(|| Error::parse(field("pitch"), format!("`{p}` is not in 0..=127")))?,
        ),
        None => None,
    };
    Ok(Some(GridEvent {
        time_beats,
        voice,
        velocity,
        pitch,
    }))
}

pub fn parse_events(text: &str) -> Result<Vec<GridEvent>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(e) = parse_event_line(line, i + 1)? {
            out.push(e);
        }
    }
    Ok(out)
}

pub fn format_events(events: &[GridEvent]) -> String {
    let mut s = String::new();
    for e in events {
        let _ = write!(s, "{} {} {}", e.time_beats, e.voice, e.velocity);
        if let Some(p) = e.pitch {
            let _ = write!(s, " {p}");
        }
        s.push('\n');
    }
    s
}
