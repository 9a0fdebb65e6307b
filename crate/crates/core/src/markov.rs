//! Online first-order Markov model of pitch with an independent duration
//! histogram, used to turn generated rhythms into pitched notes.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::GridEvent;

/// Quantized note values in beats, shortest first.
pub const DURATION_BUCKETS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Index of the nearest bucket; ties go to the shorter value.
pub fn duration_bucket(beats: f64) -> usize {
    let mut best = 0;
    for (i, &b) in DURATION_BUCKETS.iter().enumerate().skip(1) {
        if (beats - b).abs() < (beats - DURATION_BUCKETS[best]).abs() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub time_beats: f64,
    pub pitch: u8,
    pub velocity: f64,
    pub duration_beats: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct MarkovTable {
    transitions: BTreeMap<u8, BTreeMap<u8, u64>>,
    unigrams: BTreeMap<u8, u64>,
    durations: [u64; 5],
    last_pitch: Option<u8>,
    smoothing_k: f64,
}

impl MarkovTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_smoothing(k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::Config(format!("smoothing_k must be >= 0, got {k}")));
        }
        Ok(Self {
            smoothing_k: k,
            ..Self::default()
        })
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn last_pitch(&self) -> Option<u8> {
        self.last_pitch
    }

    pub fn transitions(&self) -> &BTreeMap<u8, BTreeMap<u8, u64>> {
        &self.transitions
    }

    pub fn unigrams(&self) -> &BTreeMap<u8, u64> {
        &self.unigrams
    }

    /// Counts per entry of [`DURATION_BUCKETS`].
    pub fn duration_counts(&self) -> &[u64; 5] {
        &self.durations
    }

    pub fn transition_count(&self, from: u8, to: u8) -> u64 {
        self.transitions.get(&from).and_then(|r| r.get(&to)).copied().unwrap_or(0)
    }

    pub fn total_transitions(&self) -> u64 {
        self.transitions.values().flat_map(|r| r.values()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.unigrams.is_empty()
    }

    pub fn observe(&mut self, pitch: u8, duration_beats: f64) -> Result<()> {
        if pitch > 127 {
            return Err(Error::InvalidEvent(format!("pitch {pitch} outside 0..=127")));
        }
        if !(duration_beats > 0.0 && duration_beats.is_finite()) {
            return Err(Error::InvalidEvent(format!("duration {duration_beats} must be positive")));
        }
        *self.unigrams.entry(pitch).or_default() += 1;
        if let Some(prev) = self.last_pitch {
            *self.transitions.entry(prev).or_default().entry(pitch).or_default() += 1;
        }
        self.durations[duration_bucket(duration_beats)] += 1;
        self.last_pitch = Some(pitch);
        Ok(())
    }

    /// Ends the current phrase: the next observation starts a new chain.
    pub fn end_phrase(&mut self) {
        self.last_pitch = None;
    }

    /// Next-pitch distribution after `prev` as `(pitch, probability)`.
    pub fn distribution(&self, prev: Option<u8>) -> Result<Vec<(u8, f64)>> {
        let weights = self.pitch_weights(prev)?;
        let total: f64 = weights.iter().map(|w| w.1).sum();
        Ok(weights.into_iter().map(|(p, w)| (p, w / total)).collect())
    }

    fn pitch_weights(&self, prev: Option<u8>) -> Result<Vec<(u8, f64)>> {
        if self.unigrams.is_empty() {
            return Err(Error::NoData("markov table has no observations"));
        }
        let k = self.smoothing_k;
        let row = prev.and_then(|p| self.transitions.get(&p)).filter(|r| !r.is_empty());
        let weights: Vec<(u8, f64)> = match row {
            Some(row) => self
                .unigrams
                .keys()
                .map(|p| (*p, row.get(p).copied().unwrap_or(0) as f64 + k))
                .filter(|w| w.1 > 0.0)
                .collect(),
            None => self.unigrams.iter().map(|(p, &c)| (*p, c as f64 + k)).collect(),
        };
        Ok(weights)
    }

    pub fn sample_pitch(&self, prev: Option<u8>, rng: &mut impl Rng) -> Result<u8> {
        let weights = self.pitch_weights(prev)?;
        let dist = WeightedIndex::new(weights.iter().map(|w| w.1))
            .map_err(|e| Error::Config(format!("pitch weights: {e}")))?;
        Ok(weights[dist.sample(rng)].0)
    }

    pub fn sample_duration(&self, rng: &mut impl Rng) -> Result<f64> {
        let dist = WeightedIndex::new(self.durations.iter().map(|&c| c as f64))
            .map_err(|_| Error::NoData("duration histogram is empty"))?;
        Ok(DURATION_BUCKETS[dist.sample(rng)])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::parse(e.path().to_string(), e.inner().to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Harmonized {
    pub notes: Vec<NoteEvent>,
    /// Onsets dropped because the table had nothing to sample from.
    pub skipped: usize,
}

/// One note per distinct onset time. Pitches chain from `table.last_pitch`;
/// durations never run past the next onset. Onsets sharing a time are
/// merged, keeping the loudest velocity.
pub fn harmonize(rhythm: &[GridEvent], table: &MarkovTable, rng: &mut impl Rng) -> Harmonized {
    let mut onsets: Vec<(f64, f64)> = Vec::with_capacity(rhythm.len());
    for e in rhythm {
        match onsets.last_mut() {
            Some(last) if last.0 == e.time_beats => last.1 = last.1.max(e.velocity),
            _ => onsets.push((e.time_beats, e.velocity)),
        }
    }
    if table.is_empty() || table.durations.iter().all(|&c| c == 0) {
        return Harmonized {
            notes: Vec::new(),
            skipped: onsets.len(),
        };
    }
    let mut prev = table.last_pitch;
    let mut notes = Vec::with_capacity(onsets.len());
    for (i, &(time, velocity)) in onsets.iter().enumerate() {
        let pitch = table.sample_pitch(prev, rng).expect("table is non-empty");
        let mut duration = table.sample_duration(rng).expect("histogram is non-empty");
        if let Some(next) = onsets.get(i + 1) {
            duration = duration.min(next.0 - time);
        }
        notes.push(NoteEvent {
            time_beats: time,
            pitch,
            velocity,
            duration_beats: duration,
        });
        prev = Some(pitch);
    }
    Harmonized { notes, skipped: 0 }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRepr {
    transitions: BTreeMap<u8, BTreeMap<u8, u64>>,
    unigrams: BTreeMap<u8, u64>,
    /// Keyed by bucket value in beats.
    durations: BTreeMap<String, u64>,
    #[serde(default)]
    last_pitch: Option<u8>,
    #[serde(default)]
    smoothing_k: f64,
}

impl From<MarkovTable> for TableRepr {
    fn from(t: MarkovTable) -> Self {
        Self {
            transitions: t.transitions,
            unigrams: t.unigrams,
            durations: DURATION_BUCKETS
                .iter()
                .zip(t.durations)
                .map(|(b, c)| (b.to_string(), c))
                .collect(),
            last_pitch: t.last_pitch,
            smoothing_k: t.smoothing_k,
        }
    }
}

impl TryFrom<TableRepr> for MarkovTable {
    type Error = String;

    fn try_from(r: TableRepr) -> std::result::Result<Self, String> {
        let mut durations = [0u64; 5];
        for (key, count) in r.durations {
            let beats: f64 = key.parse().map_err(|_| format!("duration bucket `{key}`"))?;
            let i = DURATION_BUCKETS
                .iter()
                .position(|&b| b == beats)
                .ok_or_else(|| format!("`{key}` is not a duration bucket"))?;
            durations[i] = count;
        }
        let pitches = r.unigrams.keys().chain(r.transitions.keys()).chain(r.last_pitch.iter());
        if let Some(p) = pitches.into_iter().find(|&&p| p > 127) {
            return Err(format!("pitch {p} outside 0..=127"));
        }
        for (from, row) in &r.transitions {
            for to in row.keys() {
                if !r.unigrams.contains_key(to) {
                    return Err(format!("transition {from}->{to} targets an unobserved pitch"));
                }
            }
        }
        if !(r.smoothing_k >= 0.0 && r.smoothing_k.is_finite()) {
            return Err(format!("smoothing_k {} must be >= 0", r.smoothing_k));
        }
        Ok(MarkovTable {
            transitions: r.transitions,
            unigrams: r.unigrams,
            durations,
            last_pitch: r.last_pitch,
            smoothing_k: r.smoothing_k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const C4: u8 = 60;
    const E4: u8 = 64;
    const G4: u8 = 67;

    fn onset(t: f64) -> GridEvent {
        GridEvent::new(t, 0, 0.8)
    }

    #[test]
    fn observe_builds_chain() {
        let mut t = MarkovTable::new();
        t.observe(C4, 1.0).unwrap();
        assert_eq!(t.unigrams()[&C4], 1);
        assert_eq!(t.total_transitions(), 0);
        assert_eq!(t.last_pitch(), Some(C4));
        t.observe(E4, 0.7).unwrap();
        assert_eq!(t.transition_count(C4, E4), 1);
        assert_eq!(t.duration_counts()[1], 1);
    }

    #[test]
    fn bucket_ties_go_shorter() {
        assert_eq!(DURATION_BUCKETS[duration_bucket(0.7)], 0.5);
        assert_eq!(DURATION_BUCKETS[duration_bucket(0.75)], 0.5);
        assert_eq!(DURATION_BUCKETS[duration_bucket(3.0)], 2.0);
        assert_eq!(DURATION_BUCKETS[duration_bucket(100.0)], 4.0);
        assert_eq!(DURATION_BUCKETS[duration_bucket(0.01)], 0.25);
    }

    #[test]
    fn row_probabilities_are_count_ratios() {
        let mut t = MarkovTable::new();
        for p in [C4, E4, C4, E4, C4, G4] {
            t.observe(p, 1.0).unwrap();
        }
        let d: BTreeMap<u8, f64> = t.distribution(Some(C4)).unwrap().into_iter().collect();
        assert_eq!(d.len(), 2);
        assert!((d[&E4] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[&G4] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn seeded_samples_match_count_ratios() {
        let mut t = MarkovTable::new();
        for p in [C4, E4, C4, E4, C4, G4] {
            t.observe(p, 1.0).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let e4 = (0..n).filter(|_| t.sample_pitch(Some(C4), &mut rng).unwrap() == E4).count();
        assert!((e4 as f64 / n as f64 - 2.0 / 3.0).abs() < 0.02);

        let mut d = MarkovTable::new();
        d.observe(C4, 0.5).unwrap();
        d.observe(E4, 1.0).unwrap();
        let half = (0..n).filter(|_| d.sample_duration(&mut rng).unwrap() == 0.5).count();
        assert!((half as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn empty_row_falls_back_and_empty_table_errors() {
        let mut t = MarkovTable::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(t.sample_pitch(None, &mut rng), Err(Error::NoData(_))));
        assert!(matches!(t.sample_duration(&mut rng), Err(Error::NoData(_))));
        t.observe(C4, 1.0).unwrap();
        for _ in 0..20 {
            assert_eq!(t.sample_pitch(Some(G4), &mut rng).unwrap(), C4);
            assert_eq!(t.sample_duration(&mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn smoothing_reaches_unseen_successors() {
        let mut t = MarkovTable::with_smoothing(1.0).unwrap();
        for p in [C4, E4, G4] {
            t.observe(p, 1.0).unwrap();
        }
        let d = t.distribution(Some(C4)).unwrap();
        assert_eq!(d.len(), 3);
        assert!(MarkovTable::with_smoothing(-1.0).is_err());
    }

    #[test]
    fn harmonize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rhythm = [onset(0.0), onset(0.5), onset(2.0)];
        let out = harmonize(&rhythm, &MarkovTable::new(), &mut rng);
        assert!(out.notes.is_empty());
        assert_eq!(out.skipped, 3);

        let mut t = MarkovTable::new();
        t.observe(C4, 1.0).unwrap();
        let out = harmonize(&rhythm, &t, &mut rng);
        assert_eq!(out.notes.len(), 3);
        assert!(out.notes.iter().all(|n| n.pitch == C4));
        assert_eq!(out.notes[0].duration_beats, 0.5);
        assert_eq!(out.notes[1].duration_beats, 1.0);
    }

    #[test]
    fn equal_time_onsets_merge() {
        let mut t = MarkovTable::new();
        t.observe(C4, 1.0).unwrap();
        let rhythm = [GridEvent::new(0.0, 0, 0.3), GridEvent::new(0.0, 1, 0.9)];
        let out = harmonize(&rhythm, &t, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.notes.len(), 1);
        assert_eq!(out.notes[0].velocity, 0.9);
    }

    #[test]
    fn json_round_trip_and_field_errors() {
        let mut t = MarkovTable::new();
        for (p, d) in [(C4, 1.0), (E4, 0.25), (G4, 4.0)] {
            t.observe(p, d).unwrap();
        }
        let back = MarkovTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let bad = t.to_json().replace("\"0.25\"", "\"0.3\"");
        assert!(MarkovTable::from_json(&bad).is_err());
        let err = MarkovTable::from_json(r#"{"transitions":{},"unigrams":{"60":"x"},"durations":{}}"#).unwrap_err();
        assert!(err.to_string().contains("unigrams"), "{err}");
    }
}
