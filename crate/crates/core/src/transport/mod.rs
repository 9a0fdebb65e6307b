//! Tempo clock, event scheduling and CV rendering.

mod clock;
mod curve;
mod cv;
mod grouping;
mod schedule;

pub use clock::{tap, TransportState, MAX_BPM, MIN_BPM, PHASE_SNAP};
pub use curve::{fit_modulation_curve, ModulationCurve};
pub use cv::{render_cv, CvFrame, CvOnset, CvRenderer, DEFAULT_GATE_MS};
pub use grouping::{group_step, ChannelStep, VoiceGrouping};
pub use schedule::{beats_to_seconds, schedule_bar, schedule_pattern, TimedEvent};
