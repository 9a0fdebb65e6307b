use serde::{Deserialize, Serialize};

use crate::hvo::{HvoPattern, STEPS_PER_BAR, STEP_BEATS};

/// A hit placed on the wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub time_s: f64,
    pub step: usize,
    pub voice: usize,
    pub velocity: f64,
}

pub fn beats_to_seconds(beats: f64, bpm: f64) -> f64 {
    beats * 60.0 / bpm
}

fn place(pattern: &HvoPattern, steps: std::ops::Range<usize>, first: usize, bar_start_beats: f64, bpm: f64) -> Vec<TimedEvent> {
    let v = pattern.voices();
    let mut out = Vec::new();
    for t in steps {
        for voice in 0..v {
            if !pattern.hit(t, voice) {
                continue;
            }
            let local = (t - first) as f64 + pattern.offset(t, voice);
            out.push(TimedEvent {
                time_s: beats_to_seconds(bar_start_beats + local.max(0.0) * STEP_BEATS, bpm),
                step: t,
                voice,
                velocity: pattern.velocity(t, voice),
            });
        }
    }
    out.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then(a.voice.cmp(&b.voice)));
    out
}

/// Every hit of `pattern` starting at `bar_start_beats`. An early hit on
/// step 0 is clamped to the start rather than reaching into played time.
pub fn schedule_pattern(pattern: &HvoPattern, bar_start_beats: f64, bpm: f64) -> Vec<TimedEvent> {
    place(pattern, 0..pattern.steps(), 0, bar_start_beats, bpm)
}

/// Hits of one bar of the pattern (`half` 0 or 1) placed at `bar_start_beats`.
pub fn schedule_bar(pattern: &HvoPattern, half: usize, bar_start_beats: f64, bpm: f64) -> Vec<TimedEvent> {
    let first = (half % 2) * STEPS_PER_BAR;
    place(pattern, first..first + STEPS_PER_BAR, first, bar_start_beats, bpm)
}
