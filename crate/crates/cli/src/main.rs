use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use thinkstream_core::atdm::run_episode;
use thinkstream_core::backend::{HttpReasoner, Reasoner, ScriptedOracle};
use thinkstream_core::config::EngineConfig;
use thinkstream_core::eval::{
    evaluate, generate_dataset, generate_feature_stream, hpsi_inspect, BackendChoice, DatasetOptions,
};
use thinkstream_core::stream::{load_stream, IngestMode, QueryEpisode};

#[derive(Parser)]
#[command(name = "thinkstream", version, about = "Streaming video QA engine")]
struct Cli {
    /// TOML engine configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Verbose logging, including backend requests (API key redacted).
    #[arg(long, global = true)]
    debug: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Scripted replies from a JSON file.
    Mock,
    /// OpenAI-compatible chat endpoint from REASONER_BASE_URL.
    Http,
}

#[derive(Args)]
struct ControllerFlags {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Clips whose captions may be requested ahead.
    #[arg(long)]
    wpar: Option<usize>,
    /// Seed forwarded with every backend request.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace confidences with 0/1 answerable flags.
    #[arg(long)]
    binary_gate: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and stream telemetry as NDJSON on stdout.
    Run {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        episode: PathBuf,
        /// Reply script for the mock backend (defaults to script.json next to the episode).
        #[arg(long)]
        script: Option<PathBuf>,
        #[command(flatten)]
        flags: ControllerFlags,
    },
    /// Evaluate every episode of a generated dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: ControllerFlags,
    },
    /// Generate a synthetic caption-mode dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Episodes that never resolve.
        #[arg(long, default_value_t = 0)]
        unresolvable: usize,
        /// Episodes with a scripted confidence drop.
        #[arg(long, default_value_t = 0)]
        drops: usize,
    },
    /// Generate a feature-mode stream matching the configured schedule.
    GenFeatures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        clip_seconds: f64,
    },
    /// Dump the layout, masks and position IDs for a feature stream.
    HpsiInspect {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of aggregation levels.
        #[arg(long)]
        levels: Option<usize>,
        /// Drop the first-frame anchor from the mask.
        #[arg(long)]
        no_first_frame: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(EngineConfig::default()),
    }
}

fn apply_flags(cfg: &mut EngineConfig, flags: &ControllerFlags) -> Result<()> {
    if let Some(w) = flags.wpar {
        cfg.atdm.w_par = w;
    }
    if let Some(s) = flags.seed {
        cfg.atdm.seed = s;
    }
    cfg.atdm.binary_gate |= flags.binary_gate;
    cfg.validate()?;
    Ok(())
}

fn http_backend(debug: bool) -> Result<HttpReasoner> {
    Ok(HttpReasoner::from_env()
        .context("configuring the http backend")?
        .with_debug(debug))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Run {
            stream,
            episode,
            script,
            flags,
        } => {
            apply_flags(&mut cfg, flags)?;
            let stream = load_stream(stream, IngestMode::Caption)
                .with_context(|| format!("loading stream {}", stream.display()))?;
            let ep = QueryEpisode::load(episode).with_context(|| format!("loading episode {}", episode.display()))?;
            let backend: Box<dyn Reasoner> = match flags.backend {
                BackendKind::Mock => {
                    let path = match script {
                        Some(p) => p.clone(),
                        None => episode.with_file_name("script.json"),
                    };
                    Box::new(
                        ScriptedOracle::from_file(&path)
                            .with_context(|| format!("loading script {}", path.display()))?,
                    )
                }
                BackendKind::Http => Box::new(http_backend(cli.debug)?),
            };
            let sink: Box<dyn Write + Send> = Box::new(std::io::stdout());
            let trace = run_episode(&stream, &ep, &backend, cfg.atdm, Some(sink))?;
            match (&trace.timing.answer_text, trace.timing.delta) {
                (Some(a), Some(d)) => eprintln!("answered at clip {:?}: {a} (delta {d})", trace.answer_clip),
                _ => eprintln!("unresolved: stream ended before every sub-question was answered"),
            }
            eprintln!("backend calls: {}, reflections: {}", trace.backend_calls, trace.reflections);
        }
        Command::Eval { dataset, out, flags } => {
            apply_flags(&mut cfg, flags)?;
            let backend = match flags.backend {
                BackendKind::Mock => BackendChoice::Scripted,
                BackendKind::Http => BackendChoice::Shared(Arc::new(http_backend(cli.debug)?)),
            };
            let report = evaluate(dataset, &backend, cfg.atdm)
                .with_context(|| format!("evaluating {}", dataset.display()))?;
            match out {
                Some(p) => std::fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", report.to_json()),
            }
            let a = &report.aggregates;
            eprintln!(
                "accuracy {:.3} ({} / {}), unresolved {}, failed {}",
                a.accuracy, a.correct, a.total, a.unresolved, a.failed
            );
        }
        Command::Gen {
            out,
            count,
            seed,
            unresolvable,
            drops,
        } => {
            if unresolvable + drops > *count {
                bail!("unresolvable ({unresolvable}) plus drops ({drops}) exceed count ({count})");
            }
            let opts = DatasetOptions {
                seed: *seed,
                count: *count,
                unresolvable: *unresolvable,
                drops: *drops,
                ..DatasetOptions::default()
            };
            let m = generate_dataset(out, &opts)?;
            eprintln!("wrote {} episodes to {}", m.episodes.len(), out.display());
        }
        Command::GenFeatures {
            out,
            clips,
            seed,
            clip_seconds,
        } => {
            let s = &cfg.schedule;
            let stream = generate_feature_stream(*seed, *clips, s.clip_frames, s.tokens_per_frame, s.d, *clip_seconds)?;
            stream.save(out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::HpsiInspect {
            stream,
            out,
            levels,
            no_first_frame,
        } => {
            if let Some(l) = levels {
                cfg.schedule = cfg.schedule.with_levels(*l)?;
            }
            if *no_first_frame {
                cfg.mask.first_frame_anchor = false;
            }
            let stream = load_stream(stream, IngestMode::Feature)
                .with_context(|| format!("loading stream {}", stream.display()))?;
            let summary = hpsi_inspect(&cfg, &stream, out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.debug { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(&cli)
}
