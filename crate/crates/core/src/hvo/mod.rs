//! Symbolic pattern representation and the overdub input buffer.

mod buffer;
mod event;
pub mod format;
mod pattern;

pub use buffer::{BufferEntry, InputBuffer, Lifetime};
pub use event::GridEvent;
pub use pattern::{
    pattern_to_events, quantize_events, HvoPattern, BARS, BEATS_PER_BAR, DEFAULT_VOICES,
    LOOP_BEATS, MAX_OFFSET, STEPS, STEPS_PER_BAR, STEP_BEATS, VOICE_NAMES,
};
