use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::HvoPattern;
use crate::model::{encode, weights_checksum, DensityMap, LatentVec, ModelWeights};
use crate::nav::AutonomyState;
use crate::transport::VoiceGrouping;

pub const PRESET_VERSION: u32 = 1;

/// Static references A and B with the control values that go with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub version: u32,
    pub pattern_a: HvoPattern,
    pub pattern_b: HvoPattern,
    pub z_a: LatentVec<f32>,
    pub z_b: LatentVec<f32>,
    pub densities: DensityMap,
    pub grouping: VoiceGrouping,
    pub autonomy: AutonomyState,
    /// Checksum of the weights the cached latents were encoded under.
    pub weights_checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPreset {
    pub preset: Preset,
    /// Set when the cached latents were stale and had to be recomputed.
    pub reencoded: bool,
}

impl Preset {
    pub fn new(
        weights: &ModelWeights<f32>,
        pattern_a: HvoPattern,
        pattern_b: HvoPattern,
        densities: DensityMap,
        grouping: VoiceGrouping,
        autonomy: AutonomyState,
    ) -> Result<Self> {
        let z_a = encode(weights, &pattern_a)?.mean();
        let z_b = encode(weights, &pattern_b)?.mean();
        Ok(Self {
            version: PRESET_VERSION,
            pattern_a,
            pattern_b,
            z_a,
            z_b,
            densities,
            grouping,
            autonomy,
            weights_checksum: weights_checksum(weights),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("preset serializes")
    }

    /// Parses and validates against `weights`, re-encoding stale latents.
    pub fn from_json(text: &str, weights: &ModelWeights<f32>) -> Result<LoadedPreset> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse("preset", e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(PRESET_VERSION) => {}
            Some(v) => {
                return Err(Error::UnsupportedVersion {
                    what: "preset",
                    found: u32::try_from(v).unwrap_or(u32::MAX),
                    expected: PRESET_VERSION,
                })
            }
            None => return Err(Error::parse("version", "missing or not an integer")),
        }
        let mut preset: Preset = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::parse(e.path().to_string(), e.inner().to_string()))?;
        preset.validate()?;

        let checksum = weights_checksum(weights);
        let z_a = encode(weights, &preset.pattern_a)?.mean();
        let z_b = encode(weights, &preset.pattern_b)?.mean();
        let stale = preset.weights_checksum != checksum || preset.z_a != z_a || preset.z_b != z_b;
        if stale {
            log::warn!(
                "preset latents were encoded under weights {}, current weights are {}; re-encoding",
                short(&preset.weights_checksum),
                short(&checksum)
            );
            preset.z_a = z_a;
            preset.z_b = z_b;
            preset.weights_checksum = checksum;
        }
        Ok(LoadedPreset {
            preset,
            reencoded: stale,
        })
    }

    fn validate(&self) -> Result<()> {
        let v = self.pattern_a.voices();
        if self.pattern_b.voices() != v {
            return Err(Error::parse("pattern_b", "voice count differs from pattern_a"));
        }
        self.grouping
            .check_voices(v)
            .map_err(|e| Error::parse("grouping", e.to_string()))?;
        if self.densities.groups() != self.grouping.channels() {
            return Err(Error::parse("densities", "one density per grouping channel expected"));
        }
        self.autonomy
            .validate()
            .map_err(|e| Error::parse("autonomy", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, weights: &ModelWeights<f32>) -> Result<LoadedPreset> {
        Self::from_json(&std::fs::read_to_string(path)?, weights)
    }
}

fn short(s: &str) -> &str {
    &s[..s.len().min(12)]
}
