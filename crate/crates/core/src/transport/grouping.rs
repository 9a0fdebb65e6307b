use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::HvoPattern;

/// Total map from drum voices to output channels.
///
/// Channel labels are optional and unset by default; the output side is free
/// to interpret channels however it is patched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GroupingRepr", into = "GroupingRepr")]
pub struct VoiceGrouping {
    channel_of: Vec<usize>,
    channels: usize,
    labels: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct GroupingRepr {
    channel_of: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl From<VoiceGrouping> for GroupingRepr {
    fn from(g: VoiceGrouping) -> Self {
        Self {
            channel_of: g.channel_of,
            labels: g.labels,
        }
    }
}

impl TryFrom<GroupingRepr> for VoiceGrouping {
    type Error = Error;

    fn try_from(r: GroupingRepr) -> Result<Self> {
        let g = VoiceGrouping::new(r.channel_of)?;
        match r.labels {
            Some(l) => g.with_labels(l),
            None => Ok(g),
        }
    }
}

impl VoiceGrouping {
    pub fn new(channel_of: Vec<usize>) -> Result<Self> {
        if channel_of.is_empty() {
            return Err(Error::Config("grouping must cover at least one voice".into()));
        }
        let channels = channel_of.iter().max().map_or(0, |m| m + 1);
        for c in 0..channels {
            if !channel_of.contains(&c) {
                return Err(Error::Config(format!("channel {c} has no member voices")));
            }
        }
        Ok(Self {
            channel_of,
            channels,
            labels: None,
        })
    }

    /// One channel per voice.
    pub fn identity(voices: usize) -> Self {
        Self {
            channel_of: (0..voices).collect(),
            channels: voices,
            labels: None,
        }
    }

    /// Four-channel reduction of the default nine-voice kit: kick, snare,
    /// hats and cymbals, toms.
    pub fn four_channel() -> Self {
        Self::new(vec![0, 1, 2, 2, 3, 3, 3, 2, 2]).expect("static grouping is valid")
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.channels {
            return Err(Error::Config(format!(
                "{} labels for {} channels",
                labels.len(),
                self.channels
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn voices(&self) -> usize {
        self.channel_of.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel_of(&self, voice: usize) -> usize {
        self.channel_of[voice]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn members(&self, channel: usize) -> impl Iterator<Item = usize> + '_ {
        self.channel_of
            .iter()
            .enumerate()
            .filter(move |&(_, &c)| c == channel)
            .map(|(v, _)| v)
    }

    pub fn check_voices(&self, voices: usize) -> Result<()> {
        if self.voices() != voices {
            return Err(Error::Config(format!(
                "grouping covers {} voices, pattern has {voices}",
                self.voices()
            )));
        }
        Ok(())
    }
}

/// Gate and value of one output channel at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStep {
    pub gate: bool,
    pub value: f64,
}

/// OR of member hits and max member velocity for every channel at `step`.
pub fn group_step(pattern: &HvoPattern, step: usize, grouping: &VoiceGrouping) -> Vec<ChannelStep> {
    let mut out = vec![
        ChannelStep {
            gate: false,
            value: 0.0
        };
        grouping.channels()
    ];
    for v in 0..pattern.voices() {
        if pattern.hit(step, v) {
            let c = &mut out[grouping.channel_of(v)];
            c.gate = true;
            c.value = c.value.max(pattern.velocity(step, v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouped_hits_take_max_velocity() {
        let g = VoiceGrouping::new(vec![0, 0, 1]).unwrap();
        let mut p = HvoPattern::empty(3);
        p.set_hit(0, 0, 0.8, 0.0);
        p.set_hit(0, 1, 0.6, 0.1);
        let s = group_step(&p, 0, &g);
        assert_eq!(s[0], ChannelStep { gate: true, value: 0.8 });
        assert_eq!(s[1], ChannelStep { gate: false, value: 0.0 });
    }

    #[test]
    fn identity_grouping_reproduces_pattern() {
        let mut p = HvoPattern::empty(4);
        p.set_hit(3, 2, 0.55, 0.0);
        p.set_hit(9, 0, 0.25, -0.2);
        let g = VoiceGrouping::identity(4);
        for t in 0..32 {
            let s = group_step(&p, t, &g);
            for v in 0..4 {
                assert_eq!(s[v].gate, p.hit(t, v));
                assert_eq!(s[v].value, p.velocity(t, v));
            }
        }
    }

    #[test]
    fn rejects_gappy_channel_map() {
        assert!(VoiceGrouping::new(vec![0, 2]).is_err());
        assert!(VoiceGrouping::new(vec![]).is_err());
        assert_eq!(VoiceGrouping::four_channel().channels(), 4);
        assert!(VoiceGrouping::identity(2).with_labels(vec!["a".into()]).is_err());
    }
}
