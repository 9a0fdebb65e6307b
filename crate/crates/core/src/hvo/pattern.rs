use serde::{Deserialize, Serialize};

use super::event::GridEvent;
use crate::error::{Error, Result};

pub const BARS: usize = 2;
pub const STEPS_PER_BAR: usize = 16;
/// Steps in one pattern (two bars of sixteenths).
pub const STEPS: usize = BARS * STEPS_PER_BAR;
pub const BEATS_PER_BAR: f64 = 4.0;
/// Duration of one sixteenth step in beats.
pub const STEP_BEATS: f64 = 0.25;
/// Length of the loop every event is folded into.
pub const LOOP_BEATS: f64 = BARS as f64 * BEATS_PER_BAR;
pub const DEFAULT_VOICES: usize = 9;

/// Largest offset value allowed; the offset domain is `[-0.5, 0.5)`.
pub const MAX_OFFSET: f64 = 0.499_999_999_999_999_94;

/// Conventional reduced drum map used by the default voice layout.
pub const VOICE_NAMES: [&str; DEFAULT_VOICES] = [
    "kick",
    "snare",
    "closed_hat",
    "open_hat",
    "low_tom",
    "mid_tom",
    "high_tom",
    "crash",
    "ride",
];

/// Hits, velocities and micro-timing offsets on a two-bar sixteenth grid.
///
/// Grids are stored step-major: cell `(t, v)` lives at `t * voices + v`.
/// Silent cells always carry zero velocity and zero offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatternRepr", into = "PatternRepr")]
pub struct HvoPattern {
    voices: usize,
    hits: Vec<bool>,
    velocities: Vec<f64>,
    offsets: Vec<f64>,
}

impl HvoPattern {
    pub fn empty(voices: usize) -> Self {
        let n = STEPS * voices;
        Self {
            voices,
            hits: vec![false; n],
            velocities: vec![0.0; n],
            offsets: vec![0.0; n],
        }
    }

    /// Builds a pattern from step-major grids, checking every invariant.
    pub fn from_grids(
        voices: usize,
        hits: Vec<bool>,
        velocities: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        let n = STEPS * voices;
        if voices == 0 {
            return Err(Error::Config("pattern needs at least one voice".into()));
        }
        if hits.len() != n || velocities.len() != n || offsets.len() != n {
            return Err(Error::Config(format!(
                "grid sizes {}/{}/{} do not match {STEPS}x{voices}",
                hits.len(),
                velocities.len(),
                offsets.len()
            )));
        }
        for i in 0..n {
            let (vel, off) = (velocities[i], offsets[i]);
            if !vel.is_finite() || !off.is_finite() {
                return Err(Error::InvalidEvent(format!("non-finite value in cell {i}")));
            }
            if hits[i] {
                if !(0.0..=1.0).contains(&vel) {
                    return Err(Error::InvalidEvent(format!(
                        "velocity {vel} outside [0, 1] in cell {i}"
                    )));
                }
                if !(-0.5..0.5).contains(&off) {
                    return Err(Error::InvalidEvent(format!(
                        "offset {off} outside [-0.5, 0.5) in cell {i}"
                    )));
                }
            } else if vel != 0.0 || off != 0.0 {
                return Err(Error::InvalidEvent(format!(
                    "silent cell {i} carries velocity/offset"
                )));
            }
        }
        Ok(Self {
            voices,
            hits,
            velocities,
            offsets,
        })
    }

    #[inline]
    pub fn voices(&self) -> usize {
        self.voices
    }

    #[inline]
    pub fn steps(&self) -> usize {
        STEPS
    }

    #[inline]
    fn idx(&self, step: usize, voice: usize) -> usize {
        debug_assert!(step < STEPS && voice < self.voices);
        step * self.voices + voice
    }

    pub fn hit(&self, step: usize, voice: usize) -> bool {
        self.hits[self.idx(step, voice)]
    }

    pub fn velocity(&self, step: usize, voice: usize) -> f64 {
        self.velocities[self.idx(step, voice)]
    }

    pub fn offset(&self, step: usize, voice: usize) -> f64 {
        self.offsets[self.idx(step, voice)]
    }

    pub fn hits(&self) -> &[bool] {
        &self.hits
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Sets a hit, clamping velocity to `[0, 1]` and offset into `[-0.5, 0.5)`.
    pub fn set_hit(&mut self, step: usize, voice: usize, velocity: f64, offset: f64) {
        let i = self.idx(step, voice);
        self.hits[i] = true;
        self.velocities[i] = velocity.clamp(0.0, 1.0);
        self.offsets[i] = offset.clamp(-0.5, MAX_OFFSET);
    }

    pub fn clear_hit(&mut self, step: usize, voice: usize) {
        let i = self.idx(step, voice);
        self.hits[i] = false;
        self.velocities[i] = 0.0;
        self.offsets[i] = 0.0;
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|&&h| h).count()
    }

    /// Fraction of cells that carry a hit.
    pub fn density(&self) -> f64 {
        self.hit_count() as f64 / self.hits.len() as f64
    }

    /// Hits of the bar-sized half `bar` (0 or 1) as `(step, voice)` pairs.
    pub fn hits_in_bar(&self, bar: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let lo = (bar % BARS) * STEPS_PER_BAR;
        (lo..lo + STEPS_PER_BAR)
            .flat_map(move |t| (0..self.voices).map(move |v| (t, v)))
            .filter(|&(t, v)| self.hit(t, v))
    }

    /// Flat `[T x 3V]` feature matrix (hits, velocities, offsets per step).
    pub fn features(&self) -> Vec<f64> {
        let v = self.voices;
        let mut out = vec![0.0; STEPS * 3 * v];
        for t in 0..STEPS {
            let row = &mut out[t * 3 * v..(t + 1) * 3 * v];
            for j in 0..v {
                let i = t * v + j;
                row[j] = if self.hits[i] { 1.0 } else { 0.0 };
                row[v + j] = self.velocities[i];
                row[2 * v + j] = self.offsets[i];
            }
        }
        out
    }
}

/// Maps events onto the grid.
///
/// Times are folded into the 8-beat loop and snapped to the nearest sixteenth;
/// exact midpoints go to the later step so offsets stay in `[-0.5, 0.5)`.
/// Two events on the same cell resolve to the louder one (earlier folded time
/// on a velocity tie).
pub fn quantize_events(events: &[GridEvent], voices: usize) -> Result<HvoPattern> {
    if voices == 0 {
        return Err(Error::Config("pattern needs at least one voice".into()));
    }
    for e in events {
        e.validate(voices)?;
    }
    let mut pattern = HvoPattern::empty(voices);
    // folded time of the event currently occupying each cell
    let mut owner_time = vec![f64::INFINITY; STEPS * voices];
    for e in events {
        let folded = e.time_beats.rem_euclid(LOOP_BEATS);
        let (step, offset) = snap(folded);
        let i = step * voices + e.voice;
        let replace = if !pattern.hits[i] {
            true
        } else {
            let cur = pattern.velocities[i];
            e.velocity > cur || (e.velocity == cur && folded < owner_time[i])
        };
        if replace {
            pattern.hits[i] = true;
            pattern.velocities[i] = e.velocity;
            pattern.offsets[i] = offset;
            owner_time[i] = folded;
        }
    }
    Ok(pattern)
}

/// Nearest step (mod 32) and the signed offset from it, in steps.
fn snap(folded_beats: f64) -> (usize, f64) {
    let x = folded_beats / STEP_BEATS;
    let mut step = (x + 0.5).floor();
    let mut offset = x - step;
    // rounding in `x + 0.5` can push the offset just outside the half-open range
    if offset < -0.5 {
        step -= 1.0;
        offset += 1.0;
    } else if offset >= 0.5 {
        step += 1.0;
        offset -= 1.0;
    }
    let step = (step as i64).rem_euclid(STEPS as i64) as usize;
    (step, offset.clamp(-0.5, MAX_OFFSET))
}

/// One event per hit at `bar_offset_beats + (t + offset) * 0.25`, sorted by
/// time then voice. A negative result (an early hit on step 0 with a zero
/// bar offset) wraps to the end of the loop.
pub fn pattern_to_events(pattern: &HvoPattern, bar_offset_beats: f64) -> Vec<GridEvent> {
    let v = pattern.voices;
    let mut events: Vec<GridEvent> = (0..STEPS * v)
        .filter(|&i| pattern.hits[i])
        .map(|i| {
            let (t, voice) = (i / v, i % v);
            let mut time = bar_offset_beats + (t as f64 + pattern.offsets[i]) * STEP_BEATS;
            if time < 0.0 {
                time += LOOP_BEATS;
            }
            GridEvent::new(time, voice, pattern.velocities[i])
        })
        .collect();
    events.sort_by(|a, b| {
        a.time_beats
            .total_cmp(&b.time_beats)
            .then(a.voice.cmp(&b.voice))
    });
    events
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    voices: usize,
    /// One string per step, `x` for a hit and `.` for silence.
    hits: Vec<String>,
    velocities: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
}

impl From<HvoPattern> for PatternRepr {
    fn from(p: HvoPattern) -> Self {
        let v = p.voices;
        let rows = |grid: &[f64]| -> Vec<Vec<f64>> { grid.chunks(v).map(<[f64]>::to_vec).collect() };
        Self {
            voices: v,
            hits: p
                .hits
                .chunks(v)
                .map(|r| r.iter().map(|&h| if h { 'x' } else { '.' }).collect())
                .collect(),
            velocities: rows(&p.velocities),
            offsets: rows(&p.offsets),
        }
    }
}

impl TryFrom<PatternRepr> for HvoPattern {
    type Error = Error;

    fn try_from(r: PatternRepr) -> Result<Self> {
        let v = r.voices;
        let rows_ok = |n: usize| n == STEPS;
        if !rows_ok(r.hits.len()) || !rows_ok(r.velocities.len()) || !rows_ok(r.offsets.len()) {
            return Err(Error::parse("pattern", format!("expected {STEPS} step rows")));
        }
        let mut hits = Vec::with_capacity(STEPS * v);
        for (t, row) in r.hits.iter().enumerate() {
            if row.chars().count() != v {
                return Err(Error::parse(format!("hits[{t}]"), format!("expected {v} cells")));
            }
            for c in row.chars() {
                hits.push(match c {
                    'x' => true,
                    '.' => false,
                    other => {
                        return Err(Error::parse(
                            format!("hits[{t}]"),
                            format!("unexpected cell `{other}`"),
                        ))
                    }
                });
            }
        }
        let flatten = |name: &str, rows: Vec<Vec<f64>>| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(STEPS * v);
            for (t, row) in rows.into_iter().enumerate() {
                if row.len() != v {
                    return Err(Error::parse(format!("{name}[{t}]"), format!("expected {v} cells")));
                }
                out.extend(row);
            }
            Ok(out)
        };
        let velocities = flatten("velocities", r.velocities)?;
        let offsets = flatten("offsets", r.offsets)?;
        HvoPattern::from_grids(v, hits, velocities, offsets)
    }
}
