//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Run with `cargo test -p groove-cli --test acceptance -- --nocapture`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use groove_core::hvo::{pattern_to_events, quantize_events, HvoPattern, InputBuffer, Lifetime, STEPS};
use groove_core::markov::MarkovTable;
use groove_core::model::{grad_check, EvalMetrics, GradCheckConfig, TrainReport};
use groove_core::nav::{triangle_interp, TrianglePos, TriangleRefs};
use groove_core::transport::TransportState;
use groove_core::{GridEvent, LatentVec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const F1_MIN: f64 = 0.85;
const MAE_MAX: f64 = 0.10;
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const INTERP_SAMPLES: usize = 1000;
const QUANT_PATTERNS: usize = 1000;
const MARKOV_TABLES: usize = 100;
const MARKOV_DRAWS: usize = 10_000;
const MARKOV_TV_MAX: f64 = 0.05;
const TICKS: u64 = 10_000;
const PHASE_TOL: f64 = 1e-9;
const MODEL_DELAY_MS: f64 = 300.0;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

struct TrainRun {
    weights: PathBuf,
    holdout: EvalMetrics,
    report: TrainReport,
    elapsed: Duration,
}

struct Trained {
    _dir: tempfile::TempDir,
    runs: [TrainRun; 2],
}

fn groove(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_groove"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("groove runs");
    assert!(
        out.status.success(),
        "groove {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let run = |tag: &str| {
            let weights = dir.path().join(format!("w{tag}.bin"));
            let report = dir.path().join(format!("r{tag}.json"));
            let t = Instant::now();
            let stdout = groove(&["train", "--out", path(&weights), "--seed", "0", "--report", path(&report)]);
            let elapsed = t.elapsed();
            TrainRun {
                holdout: serde_json::from_slice(&stdout).unwrap(),
                report: serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap(),
                weights,
                elapsed,
            }
        };
        let runs = [run("1"), run("2")];
        Trained { _dir: dir, runs }
    })
}

fn gradient() -> Outcome {
    let t = Instant::now();
    let r = grad_check(&GradCheckConfig::default()).unwrap();
    let e = t.elapsed();
    outcome(
        "gradient correctness",
        r.max_relative_error < GRAD_TOL && e < GRAD_BUDGET,
        format!(
            "max rel err {:.3e} (< {GRAD_TOL:e}) over {} params in {:.2} s (< 60 s)",
            r.max_relative_error,
            r.params_checked,
            e.as_secs_f64()
        ),
    )
}

fn training() -> Outcome {
    let t = trained();
    let [a, b] = &t.runs;
    let same = fs::read(&a.weights).unwrap() == fs::read(&b.weights).unwrap();
    let slowest = a.elapsed.max(b.elapsed);
    let pass = a.holdout.hit_f1 >= F1_MIN
        && a.holdout.velocity_mae <= MAE_MAX
        && slowest <= TRAIN_BUDGET
        && same
        && a.holdout == b.holdout;
    outcome(
        "training",
        pass,
        format!(
            "holdout F1 {:.4} (>= {F1_MIN}), velocity MAE {:.4} (<= {MAE_MAX}), {} holdout patterns, \
             slowest run {:.0} s (<= 900 s), weight files identical: {same}",
            a.holdout.hit_f1,
            a.holdout.velocity_mae,
            a.holdout.patterns,
            slowest.as_secs_f64()
        ),
    )
}

fn random_latent(rng: &mut ChaCha8Rng, d: usize) -> LatentVec<f32> {
    LatentVec((0..d).map(|_| rng.random_range(-4.0f32..4.0)).collect())
}

fn interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    for i in 0..INTERP_SAMPLES {
        let d = 16;
        let (a, b, r) = (random_latent(&mut rng, d), random_latent(&mut rng, d), random_latent(&mut rng, d));
        let refs = TriangleRefs::new(HvoPattern::empty(9), HvoPattern::empty(9), a.clone(), b.clone(), r.clone()).unwrap();
        // every 10th sample sits on an edge or a corner
        let (alpha, tau) = match i % 10 {
            0 => ([0.0, 1.0][rng.random_range(0..2)], [0.0, 1.0][rng.random_range(0..2)]),
            1 => (rng.random::<f64>(), 0.0),
            _ => (rng.random::<f64>(), rng.random::<f64>()),
        };
        let pos = TrianglePos::new(alpha, tau);
        let w = pos.weights();
        let z = triangle_interp(&refs, pos).unwrap();
        let partition = (w.iter().sum::<f64>() - 1.0).abs() < 1e-12 && w.iter().all(|&x| x >= 0.0);
        let hull = (0..d).all(|k| {
            let lo = a.0[k].min(b.0[k]).min(r.0[k]);
            let hi = a.0[k].max(b.0[k]).max(r.0[k]);
            z.0[k] >= lo && z.0[k] <= hi
        });
        let corner = match (alpha, tau) {
            (_, t) if t == 1.0 => z == r,
            (x, t) if x == 0.0 && t == 0.0 => z == a,
            (x, t) if x == 1.0 && t == 0.0 => z == b,
            _ => true,
        };
        if !(partition && hull && corner) {
            failures += 1;
        }
    }
    outcome(
        "interpolation",
        failures == 0,
        format!("{failures} failures over {INTERP_SAMPLES} (refs, pos) samples: corners exact, weights partition 1, convex hull"),
    )
}

fn quantization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut failures = 0;
    let mut offsets_ok = true;
    for _ in 0..QUANT_PATTERNS {
        let mut p = HvoPattern::empty(9);
        let density = rng.random_range(0.05..0.6);
        for t in 0..STEPS {
            for v in 0..9 {
                if rng.random_bool(density) {
                    p.set_hit(t, v, rng.random_range(0.01..=1.0), 0.0);
                }
            }
        }
        let q = quantize_events(&pattern_to_events(&p, 0.0), 9).unwrap();
        if q != p {
            failures += 1;
        }
        offsets_ok &= q.offsets().iter().all(|&o| (-0.5..0.5).contains(&o));
    }
    outcome(
        "quantization round trip",
        failures == 0 && offsets_ok,
        format!("{failures} mismatches over {QUANT_PATTERNS} on-grid patterns; offsets in [-0.5, 0.5): {offsets_ok}"),
    )
}

fn markov() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..MARKOV_TABLES {
        let vocab: Vec<u8> = (0..rng.random_range(2..10)).map(|_| rng.random_range(36..96)).collect();
        let mut table = MarkovTable::new();
        for _ in 0..rng.random_range(20..200) {
            table.observe(vocab[rng.random_range(0..vocab.len())], 0.5).unwrap();
        }
        let (&prev, row) = table
            .transitions()
            .iter()
            .max_by_key(|(_, r)| r.values().sum::<u64>())
            .unwrap();
        let total = row.values().sum::<u64>() as f64;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..MARKOV_DRAWS {
            *counts.entry(table.sample_pitch(Some(prev), &mut rng).unwrap()).or_insert(0u64) += 1;
        }
        let pitches: std::collections::BTreeSet<u8> = row.keys().chain(counts.keys()).copied().collect();
        let tv = 0.5
            * pitches
                .iter()
                .map(|p| {
                    let expect = row.get(p).copied().unwrap_or(0) as f64 / total;
                    let seen = counts.get(p).copied().unwrap_or(0) as f64 / MARKOV_DRAWS as f64;
                    (expect - seen).abs()
                })
                .sum::<f64>();
        worst = worst.max(tv);
    }
    outcome(
        "markov convergence",
        worst <= MARKOV_TV_MAX,
        format!("worst total variation {worst:.4} (<= {MARKOV_TV_MAX}) over {MARKOV_TABLES} tables x {MARKOV_DRAWS} draws"),
    )
}

fn transport() -> Outcome {
    let mut s = TransportState::new(120.0).unwrap();
    s.set_running(true);
    let step = s.step_duration();
    let mut crossed = 0u64;
    for _ in 0..TICKS {
        let (next, steps) = s.tick(step);
        crossed += steps.len() as u64;
        s = next;
    }
    let pass = step == 0.125 && s.step_index() == TICKS && crossed == TICKS && s.phase().abs() < PHASE_TOL;
    outcome(
        "transport",
        pass,
        format!(
            "step {step} s at 120 bpm, step_index {} after {TICKS} ticks, |phase| {:.1e} (< {PHASE_TOL:e})",
            s.step_index(),
            s.phase().abs()
        ),
    )
}

const SCRIPT: &str = "\
# kick on the beat, a pickup and a late ghost note
0.0 0 0.9
1.0 0 0.7
2.0 0 0.9
2.75 0 0.4
3.0 0 0.8
{\"at_s\": 2.2, \"type\": \"set_density\", \"group\": 1, \"value\": 0.7}
5.0 0 0.9
6.5 0 0.6
9.0 0 0.9
{\"at_s\": 6.1, \"type\": \"set_position\", \"tau\": 0.8}
13.0 0 0.7
";

fn pattern_lines(log: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(log)
        .lines()
        .filter(|l| l.starts_with("{\"type\":\"pattern\""))
        .map(str::to_string)
        .collect()
}

fn render_args<'a>(events: &'a str, model: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "render", "--events", events, "--model", model, "--alpha", "0.3", "--tau", "0.6", "--bars", "8", "--seed", "5",
    ];
    args.extend_from_slice(extra);
    args
}

fn determinism(events: &str, model: &str) -> Outcome {
    let a = groove(&render_args(events, model, &[]));
    let b = groove(&render_args(events, model, &[]));
    let drums = groove(&render_args(events, model, &["--mode", "drums", "--lifetime", "4"]));
    let cv = groove(&render_args(events, model, &["--mode", "cv", "--lifetime", "4"]));
    let (pd, pc) = (pattern_lines(&drums), pattern_lines(&cv));
    let identical = a == b && !a.is_empty();
    let shared = pd == pc && pd.len() == 8;
    outcome(
        "end-to-end determinism",
        identical && shared,
        format!(
            "two renders byte-identical: {identical} ({} bytes); drums/cv pattern lines identical: {shared} ({} bars)",
            a.len(),
            pd.len()
        ),
    )
}

fn misses(log: &[u8]) -> u64 {
    let text = String::from_utf8_lossy(log);
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    last["deadline_misses"].as_u64().unwrap()
}

/// Hit times relative to their bar start; the bar cycle must never move these.
fn hit_timing(log: &[u8]) -> Vec<(u64, u64, f64)> {
    String::from_utf8_lossy(log)
        .lines()
        .filter(|l| l.starts_with("{\"type\":\"hit\""))
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let bar = v["bar"].as_u64().unwrap();
            (bar, v["step"].as_u64().unwrap(), v["time_s"].as_f64().unwrap() - bar as f64 * 2.0)
        })
        .collect()
}

fn deadline(events: &str, model: &str) -> Outcome {
    let delay = MODEL_DELAY_MS.to_string();
    let base = groove(&render_args(events, model, &[]));
    let slow = groove(&render_args(events, model, &["--delay-ms", &delay]));
    let late = groove(&render_args(events, model, &["--delay-ms", "1200", "--delay-bars", "3,5,6"]));
    let all_late = groove(&render_args(events, model, &["--delay-ms", "1001"]));
    let within_budget = base == slow && misses(&slow) == 0;
    let counted = misses(&late) == 3 && misses(&all_late) == 7;
    // a missed bar replays the previous bar's pattern, so compare placement within each bar
    let on_grid = |log: &[u8]| {
        hit_timing(log).iter().all(|&(_, step, rel)| {
            let local = (step % 16) as f64 * 0.125;
            rel >= 0.0 && rel < 2.0 && (rel - local).abs() <= 0.0625
        })
    };
    let bars = |log: &[u8]| pattern_lines(log).len();
    let timing = on_grid(&late) && on_grid(&all_late) && bars(&late) == 8 && bars(&all_late) == 8;
    outcome(
        "deadline behavior",
        within_budget && counted && timing,
        format!(
            "300 ms delay: {} misses, log identical to undelayed: {}; 1.2 s on bars 3,5,6: {} misses (expect 3); \
             1.001 s on every cycle: {} misses (expect 7); hit timing unchanged: {timing}",
            misses(&slow),
            base == slow,
            misses(&late),
            misses(&all_late)
        ),
    )
}

fn lifetime() -> Outcome {
    let mut buf = InputBuffer::new(9);
    buf.add(GridEvent::new(1.0, 0, 0.8), 0, Lifetime::bars(4)).unwrap();
    let present: Vec<bool> = (0..12).map(|bar| buf.snapshot(bar).hit_count() == 1).collect();
    let mut expired = buf.clone();
    expired.expire(4);
    let pass = present[..4].iter().all(|&p| p) && present[4..].iter().all(|&p| !p) && expired.is_empty();
    outcome(
        "lifetime semantics",
        pass,
        format!("present in snapshots for bars {:?}; empty after expiry at bar 4: {}",
            present.iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect::<Vec<_>>(),
            expired.is_empty()),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.txt");
    fs::write(&events, SCRIPT).unwrap();
    let results = vec![
        gradient(),
        training(),
        interpolation(),
        quantization(),
        markov(),
        transport(),
        determinism(path(&events), path(&trained().runs[0].weights)),
        deadline(path(&events), path(&trained().runs[0].weights)),
        lifetime(),
    ];
    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Smoothed (5-epoch window) total loss of the default training run.
#[test]
fn training_loss_decreases() {
    let epochs = &trained().runs[0].report.epochs;
    let totals: Vec<f64> = epochs.iter().map(|e| e.loss.total).collect();
    let smooth: Vec<f64> = totals.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let rises: Vec<(usize, f64)> = smooth
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(i, w)| (i + 5, w[1] - w[0]))
        .collect();
    assert!(rises.is_empty(), "smoothed loss rose at epochs {rises:?}");
}
