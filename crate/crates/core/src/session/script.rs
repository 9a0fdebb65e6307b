//! Scripted, simulated-clock rendering of a session.

use serde::{Deserialize, Serialize};

use super::engine::{OutputRecord, Session};
use super::message::ControlMessage;
use crate::error::{Error, Result};
use crate::hvo::format::parse_event_line;

/// A control message due at `at_s` seconds of session time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedMessage {
    #[serde(alias = "at")]
    pub at_s: f64,
    #[serde(flatten)]
    pub msg: ControlMessage,
}

/// Parses an event script. Each non-blank line is either a JSON object
/// (`{"at_s": 1.0, "type": "crossfade", "alpha": 0.3}`) or a plain event line
/// `time_beats voice velocity [pitch]`, which becomes an `onset_in` (or
/// `note_in` with a pitch) due when the clock reaches that beat at `bpm`.
pub fn parse_script(text: &str, bpm: f64) -> Result<Vec<TimedMessage>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.starts_with('{') {
            let mut de = serde_json::Deserializer::from_str(line);
            let m: TimedMessage = serde_path_to_error::deserialize(&mut de)
                .map_err(|e| Error::parse(format!("line {lineno}: {}", e.path()), e.inner().to_string()))?;
            if !(m.at_s >= 0.0 && m.at_s.is_finite()) {
                return Err(Error::parse(format!("line {lineno}: at_s"), "must be finite and >= 0"));
            }
            out.push(m);
            continue;
        }
        let Some(e) = parse_event_line(line, lineno)? else {
            continue;
        };
        let msg = match e.pitch {
            Some(pitch) => ControlMessage::NoteIn {
                pitch,
                velocity: e.velocity,
                time_beats: Some(e.time_beats),
                duration_beats: None,
            },
            None => ControlMessage::OnsetIn {
                velocity: e.velocity,
                time_beats: Some(e.time_beats),
            },
        };
        out.push(TimedMessage {
            at_s: e.time_beats * 60.0 / bpm,
            msg,
        });
    }
    Ok(out)
}

/// Runs `bars` bars on a simulated clock, delivering each message when its
/// time is reached. Rejected messages become `error` records. The log ends
/// with a metrics record.
pub fn render_offline(session: &mut Session, script: &[TimedMessage], bars: u64) -> Result<Vec<OutputRecord>> {
    let mut messages: Vec<&TimedMessage> = script.iter().collect();
    messages.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
    let mut queue = messages.into_iter().peekable();
    let last_step = bars * crate::hvo::STEPS_PER_BAR as u64;
    let mut out = Vec::new();
    if bars == 0 {
        return Ok(out);
    }
    let deliver = |session: &mut Session, m: &TimedMessage, out: &mut Vec<OutputRecord>| {
        if let Err(e) = session.handle_message(&m.msg) {
            log::warn!("message at {} s rejected: {e}", m.at_s);
            out.push(OutputRecord::Error {
                time_s: session.now_s(),
                code: e.code().into(),
                detail: e.to_string(),
            });
        }
    };
    while let Some(m) = queue.next_if(|m| m.at_s <= 0.0) {
        deliver(session, m, &mut out);
    }
    out.extend(session.start()?);
    while session.transport().step_index() + 1 < last_step {
        while let Some(m) = queue.next_if(|m| m.at_s <= session.now_s()) {
            deliver(session, m, &mut out);
        }
        let to_step = session.time_to_next_step();
        let dt = match queue.peek() {
            Some(m) if m.at_s - session.now_s() < to_step => m.at_s - session.now_s(),
            _ => to_step,
        };
        out.extend(session.advance(dt)?);
    }
    out.push(OutputRecord::Metrics(session.metrics().clone()));
    Ok(out)
}
