use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A performed or generated onset in session time.
///
/// `time_beats` counts quarter notes from the start of the session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEvent {
    pub time_beats: f64,
    pub voice: usize,
    pub velocity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch: Option<u8>,
}

impl GridEvent {
    pub fn new(time_beats: f64, voice: usize, velocity: f64) -> Self {
        Self {
            time_beats,
            voice,
            velocity,
            pitch: None,
        }
    }

    pub fn with_pitch(mut self, pitch: u8) -> Self {
        self.pitch = Some(pitch);
        self
    }

    /// Checks the event against a pattern with `voices` voices.
    pub fn validate(&self, voices: usize) -> Result<()> {
        if !self.time_beats.is_finite() || self.time_beats < 0.0 {
            return Err(Error::InvalidEvent(format!(
                "time_beats must be finite and >= 0, got {}",
                self.time_beats
            )));
        }
        if !(0.0..=1.0).contains(&self.velocity) {
            return Err(Error::InvalidEvent(format!(
                "velocity must be in [0, 1], got {}",
                self.velocity
            )));
        }
        if let Some(p) = self.pitch {
            if p > 127 {
                return Err(Error::InvalidEvent(format!("pitch {p} outside 0..=127")));
            }
        }
        if self.voice >= voices {
            return Err(Error::VoiceOutOfRange {
                voice: self.voice,
                voices,
            });
        }
        Ok(())
    }
}
