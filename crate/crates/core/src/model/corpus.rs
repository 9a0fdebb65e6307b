//! Parametric synthetic groove corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hvo::{HvoPattern, DEFAULT_VOICES, MAX_OFFSET, STEPS};

const KICK: usize = 0;
const SNARE: usize = 1;
const CLOSED_HAT: usize = 2;

const KICK_MAIN_PROB: f64 = 0.9;
const KICK_SYNC_PROB: f64 = 0.15;
const SNARE_PROB: f64 = 0.85;
const HAT_SPACINGS: [usize; 3] = [4, 2, 1];
const VELOCITY_JITTER: f64 = 0.1;
const OFFSET_STD: f64 = 0.06;

const KICK_ACCENT: f64 = 0.9;
const KICK_SYNC_ACCENT: f64 = 0.6;
const SNARE_ACCENT: f64 = 0.8;
const HAT_ON_BEAT: f64 = 0.7;
const HAT_OFF_BEAT: f64 = 0.45;

/// `n` two-bar nine-voice patterns, deterministic per `seed`.
///
/// Kick on beats 1 and 3 of each bar (p = 0.9) plus syncopations on every
/// other step (p = 0.15); snare backbeat (p = 0.85); closed hats every
/// quarter, eighth or sixteenth, chosen per pattern. Velocities are accent
/// values jittered by up to ±0.1 and offsets are `N(0, 0.06)` clamped into
/// the offset domain.
pub fn synth_corpus(seed: u64, n: usize) -> Result<Vec<HvoPattern>> {
    if n == 0 {
        return Err(Error::Config("corpus size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| synth_pattern(&mut rng)).collect())
}

fn synth_pattern(rng: &mut ChaCha8Rng) -> HvoPattern {
    let offset_dist = Normal::new(0.0, OFFSET_STD).expect("valid std");
    let mut p = HvoPattern::empty(DEFAULT_VOICES);
    let hat_spacing = HAT_SPACINGS[rng.random_range(0..HAT_SPACINGS.len())];
    let hit = |rng: &mut ChaCha8Rng, p: &mut HvoPattern, t: usize, v: usize, accent: f64| {
        let vel = accent + rng.random_range(-VELOCITY_JITTER..=VELOCITY_JITTER);
        let off: f64 = offset_dist.sample(rng);
        p.set_hit(t, v, vel.clamp(0.0, 1.0), off.clamp(-0.5, MAX_OFFSET));
    };
    for t in 0..STEPS {
        let in_bar = t % 16;
        if in_bar % 8 == 0 {
            if rng.random_bool(KICK_MAIN_PROB) {
                hit(rng, &mut p, t, KICK, KICK_ACCENT);
            }
        } else if rng.random_bool(KICK_SYNC_PROB) {
            hit(rng, &mut p, t, KICK, KICK_SYNC_ACCENT);
        }
        if in_bar % 8 == 4 && rng.random_bool(SNARE_PROB) {
            hit(rng, &mut p, t, SNARE, SNARE_ACCENT);
        }
        if t % hat_spacing == 0 {
            let accent = if t % 4 == 0 { HAT_ON_BEAT } else { HAT_OFF_BEAT };
            hit(rng, &mut p, t, CLOSED_HAT, accent);
        }
    }
    p
}
