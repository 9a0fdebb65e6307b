//! The live engine: bar-synchronous generation, control handling, presets
//! and offline rendering.
//!
//! Each bar cycle is prepared at the half-bar before a boundary: snapshot the
//! input buffer, encode it as the live reference R, step autonomous
//! navigation, interpolate in the triangle, decode and threshold. The result
//! is committed at the boundary if it finished in time; otherwise the
//! previous pattern keeps playing and a deadline miss is counted. Bar `b`
//! plays half `b % 2` of the two-bar pattern.

mod config;
mod engine;
mod message;
mod preset;
mod script;

pub use config::{DelayInjection, SessionConfig, StabilityMode};
pub use engine::{to_ndjson, CycleJob, CycleResult, OutputRecord, Session, PHRASE_GAP_BEATS, TAP_RESET_S};
pub use message::{ControlMessage, ControlState, Metrics, PatternGrids, ServerMessage, ToggleTarget};
pub use preset::{LoadedPreset, Preset, PRESET_VERSION};
pub use script::{parse_script, render_offline, TimedMessage};
