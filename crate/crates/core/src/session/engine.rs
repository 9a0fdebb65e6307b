use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{SessionConfig, StabilityMode};
use super::message::{ControlMessage, ControlState, Metrics, PatternGrids, ToggleTarget};
use super::preset::{Preset, PRESET_VERSION};
use crate::error::{Error, Result};
use crate::hvo::{GridEvent, HvoPattern, InputBuffer, BEATS_PER_BAR, STEPS_PER_BAR, STEP_BEATS};
use crate::markov::{harmonize, MarkovTable};
use crate::model::{
    decode_logits, encode, extract_pattern, synth_corpus, weights_checksum, DensityMap, LatentVec, ModelWeights,
};
use crate::nav::{autonomy_step, triangle_interp, AutonomyState, TrianglePos, TriangleRefs};
use crate::transport::{group_step, schedule_bar, CvOnset, CvRenderer, TransportState, VoiceGrouping};

/// Taps further apart than this start a new tempo measurement.
pub const TAP_RESET_S: f64 = 2.0;
/// A gap this long between performed notes ends the Markov phrase.
pub const PHRASE_GAP_BEATS: f64 = 8.0;
const MIN_NOTE_BEATS: f64 = 0.25;
const MAX_NOTE_BEATS: f64 = 4.0;
const HALF_BAR_STEP: u64 = (STEPS_PER_BAR / 2) as u64;
const BAR_STEPS: u64 = STEPS_PER_BAR as u64;

/// One line of the session's output log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputRecord {
    /// The pattern playing from this bar; `half` selects which of its two bars sounds.
    Pattern {
        bar_index: u64,
        half: usize,
        #[serde(flatten)]
        grids: PatternGrids,
        densities: Vec<f64>,
    },
    Hit {
        time_s: f64,
        bar: u64,
        step: usize,
        voice: usize,
        velocity: f64,
    },
    Note {
        time_s: f64,
        bar: u64,
        pitch: u8,
        velocity: f64,
        duration_s: f64,
    },
    /// A change of a CV channel's gate or value.
    Cv {
        time_s: f64,
        channel: usize,
        gate: bool,
        value: f64,
    },
    Error {
        time_s: f64,
        code: String,
        detail: String,
    },
    Metrics(Metrics),
}

impl OutputRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Newline-delimited JSON, one record per line.
pub fn to_ndjson(records: &[OutputRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json());
        out.push('\n');
    }
    out
}

/// Everything the model step of one bar cycle needs, detached from the session.
#[derive(Debug, Clone)]
pub struct CycleJob {
    pub target_bar: u64,
    weights: Arc<ModelWeights<f32>>,
    refs: TriangleRefs<f32>,
    /// `None` reuses the cached live reference.
    snapshot: Option<HvoPattern>,
    pos: TrianglePos,
    densities: DensityMap,
    grouping: VoiceGrouping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult {
    pub target_bar: u64,
    pub pattern: HvoPattern,
    pub z_r: LatentVec<f32>,
}

impl CycleJob {
    /// Encode R, interpolate, decode, threshold.
    pub fn run(self) -> Result<CycleResult> {
        let mut refs = self.refs;
        if let Some(snapshot) = &self.snapshot {
            refs.z_r = encode(&self.weights, snapshot)?.mean();
        }
        let z = triangle_interp(&refs, self.pos)?;
        let grids = decode_logits(&self.weights, &z)?;
        let pattern = extract_pattern(&grids, &self.densities, &self.grouping)?;
        Ok(CycleResult {
            target_bar: self.target_bar,
            pattern,
            z_r: refs.z_r,
        })
    }
}

/// The live engine. It owns all mutable state; drivers feed it control
/// messages and elapsed time and collect output records.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    weights: Arc<ModelWeights<f32>>,
    weights_checksum: String,
    refs: TriangleRefs<f32>,
    buffer: InputBuffer,
    transport: TransportState,
    markov: MarkovTable,
    autonomy: AutonomyState,
    autonomous: bool,
    freeze_r: bool,
    muted: BTreeSet<usize>,
    densities: DensityMap,
    grouping: VoiceGrouping,
    playing: HvoPattern,
    pending: Option<(CycleResult, f64)>,
    awaiting: Option<u64>,
    metrics: Metrics,
    now_s: f64,
    anchor_s: f64,
    anchor_step: u64,
    autonomy_rng: ChaCha8Rng,
    markov_rng: ChaCha8Rng,
    taps: Vec<f64>,
    last_note_beats: Option<f64>,
    recent_inputs: VecDeque<f64>,
    cv: CvRenderer,
    cv_last: Vec<Option<(bool, f64)>>,
    helper_mode: bool,
    jobs: Vec<CycleJob>,
    started: bool,
}

impl Session {
    /// Without a preset, A and B are the first two synthetic corpus patterns
    /// for the config seed.
    pub fn new(mut config: SessionConfig, weights: Arc<ModelWeights<f32>>, preset: Option<Preset>) -> Result<Self> {
        let voices = weights.hyper().voices;
        let refs = match preset {
            Some(p) => {
                config.densities = p.densities;
                config.grouping = p.grouping;
                config.autonomy = p.autonomy;
                let z_r = encode(&weights, &HvoPattern::empty(voices))?.mean();
                TriangleRefs::new(p.pattern_a, p.pattern_b, p.z_a, p.z_b, z_r)?
            }
            None => {
                let mut c = synth_corpus(config.seed, 2)?;
                let b = c.pop().expect("two patterns");
                let a = c.pop().expect("two patterns");
                TriangleRefs::encode(&weights, a, b)?
            }
        };
        config.validate(voices)?;
        let transport = TransportState::new(config.bpm)?;
        let mut autonomy_rng = ChaCha8Rng::seed_from_u64(config.seed);
        autonomy_rng.set_stream(1);
        let mut markov_rng = ChaCha8Rng::seed_from_u64(config.seed);
        markov_rng.set_stream(2);
        let cv = CvRenderer::new(config.grouping.channels(), config.cv_rate_hz, config.gate_ms)?;
        Ok(Self {
            weights_checksum: weights_checksum(&weights),
            refs,
            buffer: InputBuffer::new(voices),
            transport,
            markov: MarkovTable::new(),
            autonomy: config.autonomy.clone(),
            autonomous: config.autonomous,
            freeze_r: false,
            muted: BTreeSet::new(),
            densities: config.densities.clone(),
            grouping: config.grouping.clone(),
            playing: HvoPattern::empty(voices),
            pending: None,
            awaiting: None,
            metrics: Metrics::default(),
            now_s: 0.0,
            anchor_s: 0.0,
            anchor_step: 0,
            autonomy_rng,
            markov_rng,
            taps: Vec::new(),
            last_note_beats: None,
            recent_inputs: VecDeque::new(),
            cv_last: vec![None; config.grouping.channels()],
            cv,
            helper_mode: false,
            jobs: Vec::new(),
            started: false,
            weights,
            config,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn transport(&self) -> &TransportState {
        &self.transport
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn playing(&self) -> &HvoPattern {
        &self.playing
    }

    pub fn refs(&self) -> &TriangleRefs<f32> {
        &self.refs
    }

    pub fn buffer(&self) -> &InputBuffer {
        &self.buffer
    }

    pub fn markov(&self) -> &MarkovTable {
        &self.markov
    }

    pub fn set_markov(&mut self, table: MarkovTable) {
        self.markov = table;
    }

    pub fn position(&self) -> TrianglePos {
        self.autonomy.pos
    }

    pub fn now_s(&self) -> f64 {
        self.now_s
    }

    /// Session time in beats.
    pub fn now_beats(&self) -> f64 {
        (self.transport.step_index() as f64 + self.transport.phase()) * STEP_BEATS
    }

    /// Seconds until the next sixteenth starts.
    pub fn time_to_next_step(&self) -> f64 {
        self.step_time(self.transport.step_index() + 1) - self.now_s
    }

    /// Wall time at which global step `step` starts under the current tempo.
    pub fn step_time(&self, step: u64) -> f64 {
        self.anchor_s + (step as f64 - self.anchor_step as f64) * self.transport.step_duration()
    }

    pub fn note_dropped_frames(&mut self, n: u64) {
        self.metrics.dropped_frames += n;
    }

    /// Hands model steps to the caller through [`Session::take_jobs`] instead
    /// of running them inline.
    pub fn set_helper_mode(&mut self, on: bool) {
        self.helper_mode = on;
    }

    pub fn take_jobs(&mut self) -> Vec<CycleJob> {
        std::mem::take(&mut self.jobs)
    }

    pub fn control_state(&self) -> ControlState {
        ControlState {
            alpha: self.autonomy.pos.alpha(),
            tau: self.autonomy.pos.tau(),
            bpm: self.transport.bpm(),
            densities: self.densities.values().to_vec(),
            freeze_r: self.freeze_r,
            autonomous: self.autonomous,
            muted_groups: self.muted.iter().copied().collect(),
            buffer_events: self.buffer.len(),
        }
    }

    pub fn preset(&self) -> Preset {
        Preset {
            version: PRESET_VERSION,
            pattern_a: self.refs.pattern_a.clone(),
            pattern_b: self.refs.pattern_b.clone(),
            z_a: self.refs.z_a.clone(),
            z_b: self.refs.z_b.clone(),
            densities: self.densities.clone(),
            grouping: self.grouping.clone(),
            autonomy: self.autonomy.clone(),
            weights_checksum: self.weights_checksum.clone(),
        }
    }

    /// Applies one control message. On error nothing changes.
    pub fn handle_message(&mut self, msg: &ControlMessage) -> Result<ControlState> {
        let voices = self.buffer.voices();
        match *msg {
            ControlMessage::SetPosition { alpha, tau } => {
                let pos = TrianglePos::checked(
                    alpha.unwrap_or(self.autonomy.pos.alpha()),
                    tau.unwrap_or(self.autonomy.pos.tau()),
                )?;
                self.autonomy.pos = pos;
            }
            ControlMessage::Crossfade { alpha } => {
                self.autonomy.pos = TrianglePos::checked(alpha, self.autonomy.pos.tau())?;
            }
            ControlMessage::SetDensity { group, value } => {
                let mut d = self.densities.clone();
                d.set(group, value).map_err(|e| Error::Message(e.to_string()))?;
                self.densities = d;
            }
            ControlMessage::Toggle { target, on } => match target {
                ToggleTarget::FreezeR => {
                    self.freeze_r = on.unwrap_or(!self.freeze_r);
                    if self.freeze_r {
                        self.buffer.freeze(self.transport.bar_index());
                    } else {
                        self.buffer.unfreeze();
                    }
                }
                ToggleTarget::Autonomous => self.autonomous = on.unwrap_or(!self.autonomous),
                ToggleTarget::MuteGroup { group } => {
                    if group >= self.grouping.channels() {
                        return Err(Error::Message(format!(
                            "mute group {group} of {} groups",
                            self.grouping.channels()
                        )));
                    }
                    let mute = on.unwrap_or(!self.muted.contains(&group));
                    if mute {
                        self.muted.insert(group);
                    } else {
                        self.muted.remove(&group);
                    }
                }
                ToggleTarget::ClearBuffer => self.buffer.clear(),
            },
            ControlMessage::Tap { time_s } => {
                let t = time_s.unwrap_or(self.now_s);
                if !t.is_finite() {
                    return Err(Error::Message("tap time must be finite".into()));
                }
                let mut taps = self.taps.clone();
                match taps.last() {
                    Some(&last) if t - last > TAP_RESET_S => taps.clear(),
                    Some(&last) if t <= last => {
                        return Err(Error::Message(format!("tap at {t} s is not after {last} s")))
                    }
                    _ => {}
                }
                taps.push(t);
                if taps.len() > 5 {
                    taps.remove(0);
                }
                if taps.len() >= 2 {
                    let bpm = crate::transport::tap(&taps)?;
                    self.set_bpm(bpm)?;
                }
                self.taps = taps;
            }
            ControlMessage::SetTempo { bpm } => {
                self.set_bpm(bpm).map_err(|e| Error::Message(e.to_string()))?;
            }
            ControlMessage::NoteIn {
                pitch,
                velocity,
                time_beats,
                duration_beats,
            } => {
                let time = time_beats.unwrap_or(self.now_beats());
                let event = GridEvent::new(time, self.config.input_voice, velocity).with_pitch(pitch);
                event.validate(voices).map_err(|e| Error::Message(e.to_string()))?;
                if let Some(d) = duration_beats {
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(Error::Message(format!("duration_beats {d} must be positive")));
                    }
                }
                if self.config.mode == StabilityMode::Harmony {
                    let gap = self.last_note_beats.map(|last| time - last);
                    if gap.is_some_and(|g| g > PHRASE_GAP_BEATS) {
                        self.markov.end_phrase();
                    }
                    let duration = duration_beats
                        .or(gap.filter(|g| *g > 0.0))
                        .unwrap_or(1.0)
                        .clamp(MIN_NOTE_BEATS, MAX_NOTE_BEATS);
                    self.markov.observe(pitch, duration)?;
                    self.last_note_beats = Some(time);
                }
                self.add_input(event)?;
            }
            ControlMessage::OnsetIn { velocity, time_beats } => {
                let time = time_beats.unwrap_or(self.now_beats());
                let event = GridEvent::new(time, self.config.input_voice, velocity);
                event.validate(voices).map_err(|e| Error::Message(e.to_string()))?;
                self.add_input(event)?;
            }
        }
        Ok(self.control_state())
    }

    fn add_input(&mut self, event: GridEvent) -> Result<()> {
        if self.buffer.add(event, self.transport.bar_index(), self.config.lifetime())? {
            self.recent_inputs.push_back(event.time_beats);
        }
        Ok(())
    }

    fn set_bpm(&mut self, bpm: f64) -> Result<()> {
        self.transport.set_bpm(bpm)?;
        self.anchor_step = self.transport.step_index();
        self.anchor_s = self.now_s - self.transport.phase() * self.transport.step_duration();
        Ok(())
    }

    /// Generates and emits bar 0. Later bars follow from [`Session::advance`].
    pub fn start(&mut self) -> Result<Vec<OutputRecord>> {
        if self.started {
            return Ok(Vec::new());
        }
        self.started = true;
        let job = self.make_job(0);
        let result = job.run()?;
        self.refs.z_r = result.z_r;
        self.playing = result.pattern;
        self.metrics.cycles += 1;
        self.emit_bar(0)
    }

    /// Moves the clock forward by `dt_s`, running the bar cycle at every
    /// half-bar and bar boundary crossed on the way.
    pub fn advance(&mut self, dt_s: f64) -> Result<Vec<OutputRecord>> {
        let mut out = if self.started { Vec::new() } else { self.start()? };
        let (next, crossed) = self.transport.tick(dt_s);
        self.transport = next;
        self.now_s += dt_s.max(0.0);
        for step in crossed {
            match step % BAR_STEPS {
                0 => {
                    let bar = step / BAR_STEPS;
                    self.commit(bar);
                    self.buffer.expire(bar);
                    out.extend(self.emit_bar(bar)?);
                }
                HALF_BAR_STEP => self.prepare(step / BAR_STEPS + 1)?,
                _ => {}
            }
        }
        Ok(out)
    }

    fn make_job(&self, target_bar: u64) -> CycleJob {
        let snapshot_bar = target_bar.saturating_sub(1);
        CycleJob {
            target_bar,
            weights: Arc::clone(&self.weights),
            refs: self.refs.clone(),
            snapshot: (!self.freeze_r).then(|| self.buffer.snapshot(snapshot_bar)),
            pos: self.autonomy.pos,
            densities: self.densities.clone(),
            grouping: self.grouping.clone(),
        }
    }

    fn prepare(&mut self, target_bar: u64) -> Result<()> {
        let now_beats = self.now_beats();
        while self.recent_inputs.front().is_some_and(|&t| t < now_beats - BEATS_PER_BAR) {
            self.recent_inputs.pop_front();
        }
        if self.autonomous {
            let onsets = self.recent_inputs.iter().filter(|&&t| t <= now_beats).count();
            let noise = (
                StandardNormal.sample(&mut self.autonomy_rng),
                StandardNormal.sample(&mut self.autonomy_rng),
            );
            self.autonomy = autonomy_step(&self.autonomy, onsets, noise);
        }
        let job = self.make_job(target_bar);
        self.metrics.cycles += 1;
        self.awaiting = Some(target_bar);
        if self.helper_mode {
            self.jobs.push(job);
        } else {
            let delay = self.config.delay.delay_for(target_bar);
            let done = self.now_s + delay;
            match job.run() {
                Ok(result) => self.deliver(result, done),
                Err(e) => log::error!("bar cycle for bar {target_bar} failed: {e}"),
            }
        }
        Ok(())
    }

    /// Accepts a finished model step that completed at session time `completed_at_s`.
    pub fn deliver(&mut self, result: CycleResult, completed_at_s: f64) {
        if !self.freeze_r {
            self.refs.z_r = result.z_r.clone();
        }
        if self.awaiting == Some(result.target_bar) {
            self.pending = Some((result, completed_at_s));
        } else {
            log::debug!("dropping stale result for bar {}", result.target_bar);
        }
    }

    fn commit(&mut self, bar: u64) {
        if self.awaiting != Some(bar) {
            return;
        }
        self.awaiting = None;
        let boundary = self.step_time(bar * BAR_STEPS);
        match self.pending.take() {
            Some((result, done)) if done <= boundary => self.playing = result.pattern,
            _ => {
                self.metrics.deadline_misses += 1;
                log::warn!("bar cycle for bar {bar} missed its deadline; keeping previous pattern");
            }
        }
    }

    fn audible(&self) -> HvoPattern {
        let mut p = self.playing.clone();
        if !self.muted.is_empty() {
            for t in 0..p.steps() {
                for v in 0..p.voices() {
                    if self.muted.contains(&self.grouping.channel_of(v)) {
                        p.clear_hit(t, v);
                    }
                }
            }
        }
        p
    }

    fn emit_bar(&mut self, bar: u64) -> Result<Vec<OutputRecord>> {
        let pattern = self.audible();
        let half = (bar % 2) as usize;
        let start_s = self.step_time(bar * BAR_STEPS);
        let bpm = self.transport.bpm();
        let step_s = self.transport.step_duration();
        let mut out = vec![OutputRecord::Pattern {
            bar_index: bar,
            half,
            grids: PatternGrids::from_pattern(&pattern),
            densities: self.densities.values().to_vec(),
        }];
        match self.config.mode {
            StabilityMode::Drums => {
                out.extend(schedule_bar(&pattern, half, 0.0, bpm).into_iter().map(|e| OutputRecord::Hit {
                    time_s: start_s + e.time_s,
                    bar,
                    step: e.step,
                    voice: e.voice,
                    velocity: e.velocity,
                }));
            }
            StabilityMode::Harmony => {
                let group = self.config.harmonic_group.expect("validated");
                let bar_beats = bar as f64 * BEATS_PER_BAR;
                let rhythm: Vec<GridEvent> = schedule_bar(&pattern, half, 0.0, bpm)
                    .into_iter()
                    .filter(|e| self.grouping.channel_of(e.voice) == group)
                    .map(|e| GridEvent::new(bar_beats + e.time_s * bpm / 60.0, e.voice, e.velocity))
                    .collect();
                let h = harmonize(&rhythm, &self.markov, &mut self.markov_rng);
                self.metrics.markov_skips += h.skipped as u64;
                out.extend(h.notes.into_iter().map(|n| OutputRecord::Note {
                    time_s: start_s + (n.time_beats - bar_beats) * 60.0 / bpm,
                    bar,
                    pitch: n.pitch,
                    velocity: n.velocity,
                    duration_s: n.duration_beats * 60.0 / bpm,
                }));
            }
            StabilityMode::Cv => {
                let first = half * STEPS_PER_BAR;
                let mut onsets = Vec::new();
                for local in 0..STEPS_PER_BAR {
                    for (channel, cs) in group_step(&pattern, first + local, &self.grouping).into_iter().enumerate() {
                        if cs.gate {
                            onsets.push(CvOnset {
                                time_s: start_s + local as f64 * step_s,
                                channel,
                                value: cs.value,
                            });
                        }
                    }
                }
                let end_s = self.step_time((bar + 1) * BAR_STEPS);
                for f in self.cv.render_until(&onsets, end_s)? {
                    let state = (f.gate, f.value);
                    if self.config.cv_all_frames || self.cv_last[f.channel] != Some(state) {
                        self.cv_last[f.channel] = Some(state);
                        out.push(OutputRecord::Cv {
                            time_s: f.time_s,
                            channel: f.channel,
                            gate: f.gate,
                            value: f.value,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}
