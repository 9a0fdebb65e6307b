use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GATE_MS: f64 = 10.0;

/// One sample of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvFrame {
    pub time_s: f64,
    pub channel: usize,
    pub gate: bool,
    pub value: f64,
}

/// A trigger on a channel; the value is held until the channel's next onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOnset {
    pub time_s: f64,
    pub channel: usize,
    pub value: f64,
}

/// Gate/value renderer that keeps pulses and held values across calls, so a
/// performance can be rendered bar by bar on one continuous sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRenderer {
    sample_rate_hz: f64,
    gate_samples: u64,
    next_sample: u64,
    held: Vec<f64>,
    gate_until: Vec<u64>,
}

impl CvRenderer {
    pub fn new(channels: usize, sample_rate_hz: f64, gate_ms: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!("sample rate {sample_rate_hz} must be positive")));
        }
        if !(gate_ms > 0.0 && gate_ms.is_finite()) {
            return Err(Error::Config(format!("gate length {gate_ms} ms must be positive")));
        }
        Ok(Self {
            sample_rate_hz,
            gate_samples: ((gate_ms * sample_rate_hz / 1000.0).round() as u64).max(1),
            next_sample: 0,
            held: vec![0.0; channels],
            gate_until: vec![0; channels],
        })
    }

    pub fn channels(&self) -> usize {
        self.held.len()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn gate_samples(&self) -> u64 {
        self.gate_samples
    }

    /// Time of the next sample to be rendered.
    pub fn position_s(&self) -> f64 {
        self.next_sample as f64 / self.sample_rate_hz
    }

    /// Index of the sample an instant falls on.
    pub fn sample_of(&self, time_s: f64) -> u64 {
        (time_s.max(0.0) * self.sample_rate_hz).round() as u64
    }

    /// Renders every sample before `end_s`, one frame per channel per sample
    /// in sample-major order. Onsets earlier than the current position fire
    /// on the first rendered sample.
    pub fn render_until(&mut self, onsets: &[CvOnset], end_s: f64) -> Result<Vec<CvFrame>> {
        let channels = self.channels();
        if let Some(o) = onsets.iter().find(|o| o.channel >= channels) {
            return Err(Error::Config(format!("onset on channel {} of {channels}", o.channel)));
        }
        let end = self.sample_of(end_s).max(self.next_sample);
        let mut pending: Vec<(u64, usize, f64)> = onsets
            .iter()
            .map(|o| (self.sample_of(o.time_s).max(self.next_sample), o.channel, o.value))
            .filter(|o| o.0 < end)
            .collect();
        pending.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut frames = Vec::with_capacity(((end - self.next_sample) as usize) * channels);
        let mut k = 0;
        for s in self.next_sample..end {
            while k < pending.len() && pending[k].0 == s {
                let (_, ch, value) = pending[k];
                self.held[ch] = value;
                self.gate_until[ch] = s + self.gate_samples;
                k += 1;
            }
            let time_s = s as f64 / self.sample_rate_hz;
            for ch in 0..channels {
                frames.push(CvFrame {
                    time_s,
                    channel: ch,
                    gate: s < self.gate_until[ch],
                    value: self.held[ch],
                });
            }
        }
        self.next_sample = end;
        Ok(frames)
    }
}

/// Stateless rendering of `duration_s` seconds starting at time 0.
pub fn render_cv(
    onsets: &[CvOnset],
    channels: usize,
    duration_s: f64,
    sample_rate_hz: f64,
    gate_ms: f64,
) -> Result<Vec<CvFrame>> {
    CvRenderer::new(channels, sample_rate_hz, gate_ms)?.render_until(onsets, duration_s)
}
