use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::Lifetime;
use crate::model::DensityMap;
use crate::nav::{AutonomyMode, AutonomyState};
use crate::transport::{VoiceGrouping, DEFAULT_GATE_MS, MAX_BPM, MIN_BPM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMode {
    /// Autonomous drum accompanist.
    #[default]
    Drums,
    /// Rhythm driver turning one channel into pitched notes.
    Harmony,
    /// Gate/value sequencer.
    Cv,
}

impl StabilityMode {
    pub fn default_lifetime(self) -> Lifetime {
        match self {
            StabilityMode::Drums => Lifetime::bars(4),
            StabilityMode::Harmony => Lifetime::bars(8),
            StabilityMode::Cv => Lifetime::Infinite,
        }
    }
}

impl std::str::FromStr for StabilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drums" => Ok(Self::Drums),
            "harmony" => Ok(Self::Harmony),
            "cv" => Ok(Self::Cv),
            other => Err(Error::Config(format!("unknown mode `{other}` (drums, harmony, cv)"))),
        }
    }
}

/// Extra simulated latency added to the model step of selected cycles.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayInjection {
    pub delay_s: f64,
    /// Target bars whose preparation is delayed; all bars when `None`.
    #[serde(default)]
    pub bars: Option<Vec<u64>>,
}

impl DelayInjection {
    pub fn delay_for(&self, target_bar: u64) -> f64 {
        match &self.bars {
            Some(bars) if !bars.contains(&target_bar) => 0.0,
            _ => self.delay_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub mode: StabilityMode,
    pub bpm: f64,
    /// Autonomy parameters and the initial playback point.
    pub autonomy: AutonomyState,
    /// Whether the autonomy mode starts enabled.
    pub autonomous: bool,
    pub densities: DensityMap,
    pub grouping: VoiceGrouping,
    /// Channel of `grouping` that is turned into notes in harmony mode.
    pub harmonic_group: Option<usize>,
    pub seed: u64,
    /// Buffer voice that receives performer input.
    pub input_voice: usize,
    /// Overrides the mode's default lifetime.
    pub lifetime: Option<Lifetime>,
    pub cv_rate_hz: f64,
    pub gate_ms: f64,
    /// Log every CV sample instead of only the samples where a channel changes.
    pub cv_all_frames: bool,
    pub delay: DelayInjection,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let grouping = VoiceGrouping::four_channel();
        Self {
            mode: StabilityMode::Drums,
            bpm: 120.0,
            autonomy: AutonomyState {
                mode: AutonomyMode::Follow,
                ..AutonomyState::default()
            },
            autonomous: false,
            densities: DensityMap::uniform(grouping.channels(), DensityMap::DEFAULT).expect("valid default"),
            grouping,
            harmonic_group: None,
            seed: 0,
            input_voice: 0,
            lifetime: None,
            cv_rate_hz: 1000.0,
            gate_ms: DEFAULT_GATE_MS,
            cv_all_frames: false,
            delay: DelayInjection::default(),
        }
    }
}

impl SessionConfig {
    pub fn with_mode(mode: StabilityMode) -> Self {
        Self {
            mode,
            harmonic_group: (mode == StabilityMode::Harmony).then_some(0),
            ..Self::default()
        }
    }

    pub fn lifetime(&self) -> Lifetime {
        self.lifetime.unwrap_or(self.mode.default_lifetime())
    }

    pub fn validate(&self, voices: usize) -> Result<()> {
        if !(MIN_BPM..=MAX_BPM).contains(&self.bpm) {
            return Err(Error::Config(format!("bpm {} outside [{MIN_BPM}, {MAX_BPM}]", self.bpm)));
        }
        self.autonomy.validate()?;
        self.grouping.check_voices(voices)?;
        if self.densities.groups() != self.grouping.channels() {
            return Err(Error::Config(format!(
                "{} densities for {} channels",
                self.densities.groups(),
                self.grouping.channels()
            )));
        }
        if self.input_voice >= voices {
            return Err(Error::Config(format!("input_voice {} of {voices}", self.input_voice)));
        }
        match (self.mode, self.harmonic_group) {
            (StabilityMode::Harmony, None) => {
                return Err(Error::Config("harmony mode requires harmonic_group".into()))
            }
            (_, Some(g)) if g >= self.grouping.channels() => {
                return Err(Error::Config(format!("harmonic_group {g} of {} channels", self.grouping.channels())))
            }
            _ => {}
        }
        if !(self.cv_rate_hz > 0.0) || !(self.gate_ms > 0.0) {
            return Err(Error::Config("cv_rate_hz and gate_ms must be positive".into()));
        }
        if !(self.delay.delay_s >= 0.0 && self.delay.delay_s.is_finite()) {
            return Err(Error::Config("injected delay must be >= 0".into()));
        }
        Ok(())
    }
}
