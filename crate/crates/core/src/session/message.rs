use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::HvoPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ToggleTarget {
    /// Freeze the live reference: the buffer stops accepting input and R is reused.
    FreezeR,
    /// Autonomous navigation of the playback point.
    Autonomous,
    MuteGroup { group: usize },
    /// One-shot: empties the input buffer.
    ClearBuffer,
}

/// Client to server. On the wire a message is one JSON object with a
/// `type` field; toggles carry `name` (and `group` for `mute_group`).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMessage {
    SetPosition {
        #[serde(skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        tau: Option<f64>,
    },
    Crossfade {
        alpha: f64,
    },
    SetDensity {
        group: usize,
        value: f64,
    },
    /// Flips a switch, or sets it when `on` is given.
    Toggle {
        #[serde(flatten)]
        target: ToggleTarget,
        #[serde(skip_serializing_if = "Option::is_none")]
        on: Option<bool>,
    },
    /// Tap-tempo press; stamped with the session clock when `time_s` is absent.
    Tap {
        #[serde(skip_serializing_if = "Option::is_none")]
        time_s: Option<f64>,
    },
    SetTempo {
        bpm: f64,
    },
    NoteIn {
        pitch: u8,
        velocity: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        time_beats: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        duration_beats: Option<f64>,
    },
    OnsetIn {
        velocity: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        time_beats: Option<f64>,
    },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ToggleName {
    FreezeR,
    Autonomous,
    MuteGroup,
    ClearBuffer,
}

/// Externally tagged twin of [`ControlMessage`]; parsing through it keeps
/// field paths in error reports.
#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum Incoming {
    SetPosition {
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        tau: Option<f64>,
    },
    Crossfade {
        alpha: f64,
    },
    SetDensity {
        group: usize,
        value: f64,
    },
    Toggle {
        name: ToggleName,
        #[serde(default)]
        group: Option<usize>,
        #[serde(default)]
        on: Option<bool>,
    },
    Tap {
        #[serde(default)]
        time_s: Option<f64>,
    },
    SetTempo {
        bpm: f64,
    },
    NoteIn {
        pitch: u8,
        velocity: f64,
        #[serde(default, alias = "time")]
        time_beats: Option<f64>,
        #[serde(default)]
        duration_beats: Option<f64>,
    },
    OnsetIn {
        velocity: f64,
        #[serde(default, alias = "time")]
        time_beats: Option<f64>,
    },
}

impl TryFrom<Incoming> for ControlMessage {
    type Error = Error;

    fn try_from(m: Incoming) -> Result<Self> {
        Ok(match m {
            Incoming::SetPosition { alpha, tau } => ControlMessage::SetPosition { alpha, tau },
            Incoming::Crossfade { alpha } => ControlMessage::Crossfade { alpha },
            Incoming::SetDensity { group, value } => ControlMessage::SetDensity { group, value },
            Incoming::Toggle { name, group, on } => {
                let target = match (name, group) {
                    (ToggleName::MuteGroup, Some(group)) => ToggleTarget::MuteGroup { group },
                    (ToggleName::MuteGroup, None) => return Err(Error::parse("group", "mute_group needs a group")),
                    (_, Some(_)) => return Err(Error::parse("group", "only mute_group takes a group")),
                    (ToggleName::FreezeR, None) => ToggleTarget::FreezeR,
                    (ToggleName::Autonomous, None) => ToggleTarget::Autonomous,
                    (ToggleName::ClearBuffer, None) => ToggleTarget::ClearBuffer,
                };
                ControlMessage::Toggle { target, on }
            }
            Incoming::Tap { time_s } => ControlMessage::Tap { time_s },
            Incoming::SetTempo { bpm } => ControlMessage::SetTempo { bpm },
            Incoming::NoteIn {
                pitch,
                velocity,
                time_beats,
                duration_beats,
            } => ControlMessage::NoteIn {
                pitch,
                velocity,
                time_beats,
                duration_beats,
            },
            Incoming::OnsetIn { velocity, time_beats } => ControlMessage::OnsetIn { velocity, time_beats },
        })
    }
}

impl ControlMessage {
    /// Parses one message, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::parse("message", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(mut fields) = value else {
            return Err(Error::parse("message", "expected a JSON object"));
        };
        let kind = match fields.remove("type") {
            Some(serde_json::Value::String(s)) => s,
            Some(_) => return Err(Error::parse("type", "expected a string")),
            None => return Err(Error::parse("type", "missing message type")),
        };
        let mut tagged = serde_json::Map::new();
        tagged.insert(kind, serde_json::Value::Object(fields));
        let incoming: Incoming = serde_path_to_error::deserialize(serde_json::Value::Object(tagged)).map_err(|e| {
            let path = e.path().to_string();
            // drop the leading variant segment
            let field = match path.split_once('.') {
                Some((_, rest)) if !rest.is_empty() => rest.to_string(),
                _ => "type".to_string(),
            };
            Error::parse(field, e.inner().to_string())
        })?;
        incoming.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

impl<'de> Deserialize<'de> for ControlMessage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        Self::from_value(value).map_err(serde::de::Error::custom)
    }
}

/// Grids in step-major rows, the layout the control surface draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternGrids {
    pub hits: Vec<Vec<u8>>,
    pub velocities: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
}

impl PatternGrids {
    pub fn from_pattern(p: &HvoPattern) -> Self {
        let v = p.voices();
        let rows = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
            (0..p.steps()).map(|t| (0..v).map(|j| f(t, j)).collect()).collect()
        };
        Self {
            hits: (0..p.steps())
                .map(|t| (0..v).map(|j| u8::from(p.hit(t, j))).collect())
                .collect(),
            velocities: rows(&|t, j| p.velocity(t, j)),
            offsets: rows(&|t, j| p.offset(t, j)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub cycles: u64,
    pub deadline_misses: u64,
    pub dropped_frames: u64,
    pub markov_skips: u64,
}

/// Control values as the server holds them, echoed after every accepted message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub alpha: f64,
    pub tau: f64,
    pub bpm: f64,
    pub densities: Vec<f64>,
    pub freeze_r: bool,
    pub autonomous: bool,
    pub muted_groups: Vec<usize>,
    pub buffer_events: usize,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Pattern {
        bar_index: u64,
        #[serde(flatten)]
        grids: PatternGrids,
        densities: Vec<f64>,
    },
    Transport {
        bpm: f64,
        bar: u64,
        step: u64,
    },
    Metrics(Metrics),
    Ack(ControlState),
    Error {
        code: String,
        detail: String,
    },
}

impl ServerMessage {
    pub fn error(e: &Error) -> Self {
        ServerMessage::Error {
            code: e.code().into(),
            detail: e.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}
