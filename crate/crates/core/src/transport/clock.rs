use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::STEPS_PER_BAR;

pub const MIN_BPM: f64 = 40.0;
pub const MAX_BPM: f64 = 240.0;
/// Phase within this distance of a step boundary snaps onto it.
pub const PHASE_SNAP: f64 = 1e-9;
const TAP_WINDOW: usize = 4;

/// Sixteenth-note clock in fixed 4/4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportState {
    bpm: f64,
    running: bool,
    step_index: u64,
    /// Position inside the current step in `[0, 1)`.
    phase: f64,
    /// Kahan compensation term of the phase sum.
    #[serde(default)]
    carry: f64,
}

impl TransportState {
    pub fn new(bpm: f64) -> Result<Self> {
        check_bpm(bpm)?;
        Ok(Self {
            bpm,
            running: true,
            step_index: 0,
            phase: 0.0,
            carry: 0.0,
        })
    }

    pub fn bpm(&self) -> f64 {
        self.bpm
    }

    pub fn running(&self) -> bool {
        self.running
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn bar_index(&self) -> u64 {
        self.step_index / STEPS_PER_BAR as u64
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Seconds per sixteenth.
    pub fn step_duration(&self) -> f64 {
        60.0 / (self.bpm * 4.0)
    }

    /// Seconds until the next step boundary.
    pub fn time_to_next_step(&self) -> f64 {
        (1.0 - self.phase) * self.step_duration()
    }

    pub fn set_bpm(&mut self, bpm: f64) -> Result<()> {
        check_bpm(bpm)?;
        self.bpm = bpm;
        Ok(())
    }

    pub fn set_running(&mut self, running: bool) {
        self.running = running;
    }

    /// Advances by `dt_s` seconds, returning the indices of the steps that
    /// started during the interval.
    pub fn tick(&self, dt_s: f64) -> (Self, Vec<u64>) {
        let mut next = *self;
        let mut crossed = Vec::new();
        if !self.running || !(dt_s > 0.0) {
            return (next, crossed);
        }
        let y = dt_s / self.step_duration() - next.carry;
        let t = next.phase + y;
        next.carry = (t - next.phase) - y;
        next.phase = t;
        while next.phase >= 1.0 - PHASE_SNAP {
            next.phase -= 1.0;
            next.step_index += 1;
            crossed.push(next.step_index);
        }
        if next.phase.abs() < PHASE_SNAP {
            next.phase = 0.0;
            next.carry = 0.0;
        }
        (next, crossed)
    }
}

fn check_bpm(bpm: f64) -> Result<()> {
    if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
        return Err(Error::Config(format!("bpm {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
    }
    Ok(())
}

/// Tempo from tap times: 60 over the median of the last four intervals,
/// clamped to the supported range.
pub fn tap(tap_times_s: &[f64]) -> Result<f64> {
    if tap_times_s.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "tap tempo needs at least 2 taps, got {}",
            tap_times_s.len()
        )));
    }
    let mut intervals: Vec<f64> = tap_times_s.windows(2).map(|w| w[1] - w[0]).collect();
    if intervals.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidEvent("tap times must be strictly increasing".into()));
    }
    let n = intervals.len().min(TAP_WINDOW);
    let mut window = intervals.split_off(intervals.len() - n);
    window.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        window[n / 2]
    } else {
        0.5 * (window[n / 2 - 1] + window[n / 2])
    };
    Ok((60.0 / median).clamp(MIN_BPM, MAX_BPM))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_examples() {
        assert_eq!(tap(&[0.0, 0.5, 1.0, 1.5]).unwrap(), 120.0);
        assert!(matches!(tap(&[0.0]), Err(Error::InsufficientData(_))));
        assert_eq!(tap(&[0.0, 0.5, 1.0, 2.0]).unwrap(), 120.0);
        assert!(tap(&[0.0, 0.5, 0.5]).is_err());
        assert_eq!(tap(&[0.0, 10.0]).unwrap(), MIN_BPM);
        // only the last four intervals count
        assert_eq!(tap(&[0.0, 3.0, 3.25, 3.5, 3.75, 4.0]).unwrap(), 240.0);
    }

    #[test]
    fn tick_examples() {
        let t = TransportState::new(120.0).unwrap();
        assert_eq!(t.step_duration(), 0.125);
        let (a, c) = t.tick(0.125);
        assert_eq!(c, vec![1]);
        assert_eq!(a.phase(), 0.0);
        let (b, c) = t.tick(0.0);
        assert!(c.is_empty());
        assert_eq!(b, t);
        let (_, c) = t.tick(0.5);
        assert_eq!(c, vec![1, 2, 3, 4]);
    }

    #[test]
    fn stopped_clock_does_not_move() {
        let mut t = TransportState::new(100.0).unwrap();
        t.set_running(false);
        assert_eq!(t.tick(3.0).0, t);
    }

    #[test]
    fn bpm_domain() {
        assert!(TransportState::new(39.9).is_err());
        assert!(TransportState::new(240.0).is_ok());
        assert!(TransportState::new(f64::NAN).is_err());
    }

    #[test]
    fn long_run_has_no_drift_at_awkward_tempo() {
        let mut t = TransportState::new(97.0).unwrap();
        let dt = t.step_duration() / 7.0;
        for _ in 0..70_000 {
            t = t.tick(dt).0;
        }
        assert_eq!(t.step_index(), 10_000);
        assert!(t.phase().abs() < 1e-9);
    }
}
