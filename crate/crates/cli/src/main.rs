use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use groove_core::hvo::Lifetime;
use groove_core::markov::MarkovTable;
use groove_core::model::{
    evaluate, grad_check, load_weights, save_weights, split_corpus, train, GradCheckConfig,
    Hyperparams, ModelWeights, TrainConfig,
};
use groove_core::session::{
    parse_script, render_offline, to_ndjson, ControlMessage, DelayInjection, OutputRecord, Preset, Session,
    SessionConfig, StabilityMode, TimedMessage,
};

mod serve;

#[derive(Parser)]
#[command(name = "groove", version, about = "Latent-space drum groove engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the VAE on the synthetic corpus and write a weights file.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        corpus_size: Option<usize>,
        /// Weigh the KL term per pattern instead of per grid cell.
        #[arg(long)]
        kl_per_pattern: bool,
        /// Write the per-epoch report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruction metrics on the holdout split of a synthetic corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        corpus_seed: u64,
        #[arg(long)]
        corpus_size: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients on the tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Offline render of a scripted performance on a simulated clock.
    Render {
        #[command(flatten)]
        common: RenderArgs,
        #[arg(long, default_value = "drums")]
        mode: StabilityMode,
        /// Pre-trained Markov table (JSON) for harmony mode.
        #[arg(long)]
        markov: Option<PathBuf>,
    },
    /// Render every CV sample of a scripted performance.
    SimulateCv {
        #[command(flatten)]
        common: RenderArgs,
        #[arg(long, default_value_t = 1000.0)]
        rate: f64,
        #[arg(long, default_value_t = groove_core::transport::DEFAULT_GATE_MS)]
        gate_ms: f64,
    },
    /// WebSocket control service.
    Serve {
        #[arg(long, default_value_t = 8962)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        preset: Option<PathBuf>,
        #[arg(long, default_value = "drums")]
        mode: StabilityMode,
        #[arg(long, default_value_t = 120.0)]
        bpm: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        markov: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RenderArgs {
    /// Event script: `time_beats voice velocity [pitch]` lines and/or JSON control messages.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = 4)]
    bars: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 120.0)]
    bpm: f64,
    /// Weights file; untrained weights from `--seed` when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    preset: Option<PathBuf>,
    /// Buffer lifetime in bars (0 = infinite); the mode default when absent.
    #[arg(long)]
    lifetime: Option<u32>,
    /// Simulated model latency in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    delay_ms: f64,
    /// Only delay the cycles preparing these bars.
    #[arg(long, value_delimiter = ',')]
    delay_bars: Option<Vec<u64>>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            out,
            seed,
            epochs,
            corpus_size,
            kl_per_pattern,
            report,
        } => {
            let mut config = TrainConfig {
                seed,
                kl_per_cell: !kl_per_pattern,
                ..TrainConfig::default()
            };
            if let Some(n) = epochs {
                config.epochs = n;
            }
            if let Some(n) = corpus_size {
                config.corpus_size = n;
            }
            let (weights, rep) = train::<f32>(&config)?;
            save_weights(&weights, &out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = report {
                fs::write(&path, serde_json::to_string_pretty(&rep)?)?;
            }
            println!("{}", serde_json::to_string(&rep.holdout)?);
        }
        Command::Eval {
            model,
            corpus_seed,
            corpus_size,
        } => {
            let weights = load_weights::<f32>(&model).with_context(|| format!("loading {}", model.display()))?;
            let mut config = TrainConfig {
                seed: corpus_seed,
                hyper: *weights.hyper(),
                ..TrainConfig::default()
            };
            if let Some(n) = corpus_size {
                config.corpus_size = n;
            }
            let (_, holdout) = split_corpus(&config)?;
            println!("{}", serde_json::to_string(&evaluate(&weights, &holdout)?)?);
        }
        Command::Gradcheck { seed, tolerance } => {
            let report = grad_check(&GradCheckConfig {
                seed,
                ..GradCheckConfig::default()
            })?;
            println!("{}", serde_json::to_string(&report)?);
            if !(report.max_relative_error < tolerance) {
                bail!("max relative error {:.3e} exceeds {tolerance:e}", report.max_relative_error);
            }
        }
        Command::Render { common, mode, markov } => {
            let table = markov.map(|p| read_markov(&p)).transpose()?;
            let records = render(&common, SessionConfig::with_mode(mode), table)?;
            write_out(common.out.as_deref(), &to_ndjson(&records))?;
        }
        Command::SimulateCv { common, rate, gate_ms } => {
            let config = SessionConfig {
                cv_rate_hz: rate,
                gate_ms,
                cv_all_frames: true,
                ..SessionConfig::with_mode(StabilityMode::Cv)
            };
            let records: Vec<_> = render(&common, config, None)?
                .into_iter()
                .filter(|r| matches!(r, OutputRecord::Cv { .. } | OutputRecord::Error { .. }))
                .collect();
            write_out(common.out.as_deref(), &to_ndjson(&records))?;
        }
        Command::Serve {
            port,
            host,
            model,
            preset,
            mode,
            bpm,
            seed,
            markov,
        } => {
            let weights = Arc::new(load_or_init(model.as_deref(), seed)?);
            let preset = preset.map(|p| read_preset(&p, &weights)).transpose()?;
            let config = SessionConfig {
                bpm,
                seed,
                ..SessionConfig::with_mode(mode)
            };
            let mut session = Session::new(config, weights, preset)?;
            if let Some(p) = markov {
                session.set_markov(read_markov(&p)?);
            }
            serve::run(session, &format!("{host}:{port}"))?;
        }
    }
    Ok(())
}

fn render(args: &RenderArgs, mut config: SessionConfig, markov: Option<MarkovTable>) -> Result<Vec<OutputRecord>> {
    config.bpm = args.bpm;
    config.seed = args.seed;
    config.lifetime = args.lifetime.map(|n| if n == 0 { Lifetime::Infinite } else { Lifetime::bars(n) });
    config.delay = DelayInjection {
        delay_s: args.delay_ms / 1000.0,
        bars: args.delay_bars.clone(),
    };
    let weights = Arc::new(load_or_init(args.model.as_deref(), args.seed)?);
    let preset = args.preset.as_deref().map(|p| read_preset(p, &weights)).transpose()?;
    let mut session = Session::new(config, weights, preset)?;
    if let Some(t) = markov {
        session.set_markov(t);
    }
    let mut script = vec![TimedMessage {
        at_s: 0.0,
        msg: ControlMessage::SetPosition {
            alpha: Some(args.alpha),
            tau: Some(args.tau),
        },
    }];
    if let Some(path) = &args.events {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        script.extend(parse_script(&text, args.bpm).with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok(render_offline(&mut session, &script, args.bars)?)
}

fn load_or_init(model: Option<&Path>, seed: u64) -> Result<ModelWeights<f32>> {
    match model {
        Some(p) => load_weights(p).with_context(|| format!("loading {}", p.display())),
        None => {
            log::warn!("no --model given; using untrained weights from seed {seed}");
            Ok(ModelWeights::init(Hyperparams::default(), seed)?)
        }
    }
}

fn read_preset(path: &Path, weights: &ModelWeights<f32>) -> Result<Preset> {
    let loaded = Preset::load(path, weights).with_context(|| format!("loading preset {}", path.display()))?;
    Ok(loaded.preset)
}

fn read_markov(path: &Path) -> Result<MarkovTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MarkovTable::from_json(&text).with_context(|| format!("parsing Markov table {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}
