use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};

use super::event::GridEvent;
use super::pattern::{quantize_events, HvoPattern};
use crate::error::Result;

/// How many bars an input event keeps influencing the generated material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifetime {
    Bars(NonZeroU32),
    Infinite,
}

impl Lifetime {
    /// Panics if `n` is zero.
    pub fn bars(n: u32) -> Self {
        Lifetime::Bars(NonZeroU32::new(n).expect("lifetime must be positive"))
    }

    /// True while an entry born at `birth_bar` still counts at `bar`.
    pub fn alive(&self, birth_bar: u64, bar: u64) -> bool {
        match self {
            Lifetime::Infinite => true,
            Lifetime::Bars(n) => birth_bar + u64::from(n.get()) > bar,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub event: GridEvent,
    pub birth_bar: u64,
    pub lifetime: Lifetime,
}

/// Looper-style overdub store of performed events.
///
/// Event times are kept as played; folding onto the two-bar grid happens when
/// a snapshot is taken. While frozen, additions are ignored and snapshots are
/// evaluated at the bar the freeze happened, so they never change.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBuffer {
    voices: usize,
    entries: Vec<BufferEntry>,
    frozen_at: Option<u64>,
}

impl InputBuffer {
    pub fn new(voices: usize) -> Self {
        Self {
            voices,
            entries: Vec::new(),
            frozen_at: None,
        }
    }

    pub fn voices(&self) -> usize {
        self.voices
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_at.is_some()
    }

    /// Records `event` born at `current_bar`. Returns `Ok(false)` when frozen.
    pub fn add(&mut self, event: GridEvent, current_bar: u64, lifetime: Lifetime) -> Result<bool> {
        event.validate(self.voices)?;
        if self.is_frozen() {
            return Ok(false);
        }
        self.entries.push(BufferEntry {
            event,
            birth_bar: current_bar,
            lifetime,
        });
        Ok(true)
    }

    pub fn freeze(&mut self, current_bar: u64) {
        if self.frozen_at.is_none() {
            self.frozen_at = Some(current_bar);
        }
    }

    pub fn unfreeze(&mut self) {
        self.frozen_at = None;
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Drops every entry whose lifetime has run out by `bar`. No-op when frozen.
    pub fn expire(&mut self, bar: u64) {
        if self.is_frozen() {
            return;
        }
        self.entries.retain(|e| e.lifetime.alive(e.birth_bar, bar));
    }

    fn effective_bar(&self, bar: u64) -> u64 {
        self.frozen_at.unwrap_or(bar)
    }

    /// Entries that still count at `bar`.
    pub fn live_entries(&self, bar: u64) -> impl Iterator<Item = &BufferEntry> {
        let at = self.effective_bar(bar);
        self.entries
            .iter()
            .filter(move |e| e.lifetime.alive(e.birth_bar, at))
    }

    /// Folds all live events onto the grid.
    pub fn snapshot(&self, bar: u64) -> HvoPattern {
        let events: Vec<GridEvent> = self.live_entries(bar).map(|e| e.event).collect();
        // events were validated on insertion
        quantize_events(&events, self.voices).expect("buffer holds validated events")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifetime_boundary() {
        let mut b = InputBuffer::new(9);
        b.add(GridEvent::new(1.0, 0, 0.8), 0, Lifetime::bars(4)).unwrap();
        for bar in 0..4 {
            assert_eq!(b.snapshot(bar).hit_count(), 1, "bar {bar}");
        }
        assert_eq!(b.snapshot(4).hit_count(), 0);
        b.expire(4);
        assert!(b.is_empty());
    }

    #[test]
    fn frozen_buffer_ignores_additions_and_expiry() {
        let mut b = InputBuffer::new(9);
        b.add(GridEvent::new(1.0, 0, 0.8), 0, Lifetime::bars(2)).unwrap();
        b.freeze(1);
        let before = b.snapshot(1);
        assert!(!b.add(GridEvent::new(2.0, 1, 0.8), 1, Lifetime::Infinite).unwrap());
        b.expire(10);
        assert_eq!(b.snapshot(10), before);
        assert_eq!(b.snapshot(11), before);
        b.unfreeze();
        assert_eq!(b.snapshot(10).hit_count(), 0);
    }

    #[test]
    fn overdub_fold_and_collision() {
        let mut b = InputBuffer::new(9);
        b.add(GridEvent::new(0.0, 2, 0.4), 0, Lifetime::Infinite).unwrap();
        b.add(GridEvent::new(8.0, 2, 0.9), 2, Lifetime::Infinite).unwrap();
        let p = b.snapshot(2);
        assert_eq!(p.hit_count(), 1);
        assert!(p.hit(0, 2));
        assert_eq!(p.velocity(0, 2), 0.9);
    }

    #[test]
    fn empty_and_repeated_snapshots() {
        let b = InputBuffer::new(9);
        assert_eq!(b.snapshot(0), HvoPattern::empty(9));
        let mut b = InputBuffer::new(9);
        b.add(GridEvent::new(3.3, 4, 0.5), 0, Lifetime::bars(1)).unwrap();
        assert_eq!(b.snapshot(0), b.snapshot(0));
    }

    #[test]
    fn add_rejects_invalid_voice() {
        let mut b = InputBuffer::new(2);
        assert!(b.add(GridEvent::new(0.0, 5, 0.5), 0, Lifetime::Infinite).is_err());
    }
}
