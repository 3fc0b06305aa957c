mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vtad::corpus::CorpusError;
use vtad::protocol::{ProtocolError, Track};
use vtad::scoring::ScoringError;

use crate::config::{Overrides, RunConfig, Verbosity};

/// Voice timbre attribute detection: corpus checks, protocol generation,
/// Diff-Net training, inference and scoring.
#[derive(Debug, Parser)]
#[command(name = "vtad", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for splits, trials and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Encoder: `synthetic`, a file, or a name under $VTAD_ENCODER_ROOT.
    #[arg(long, global = true)]
    encoder: Option<String>,
    #[arg(long, global = true, value_parser = parse_track)]
    track: Option<Track>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus_root: Option<PathBuf>,
    /// Proceed despite provenance mismatches.
    #[arg(long, global = true)]
    force: bool,
    #[arg(short, long, global = true, conflicts_with = "quiet")]
    verbose: bool,
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (inventory, annotations, encoder parameters).
    Synth(commands::SynthArgs),
    /// Validate the corpus and copy it into the output directory.
    Ingest,
    /// Split the ingested corpus and generate trial lists.
    Protocol,
    /// Train Diff-Net models on the training split.
    Train(commands::TrainArgs),
    /// Score trials with trained models and write a submission.
    Infer(commands::InferArgs),
    /// Compute EER and ACC of a submission against the trial key.
    Score(commands::ScoreArgs),
    /// Check a submission's structure against a trial list.
    Validate(commands::ValidateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest => "ingest",
            Command::Protocol => "protocol",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Score(_) => "score",
            Command::Validate(_) => "validate",
        }
    }
}

fn parse_track(s: &str) -> Result<Track, String> {
    s.parse().map_err(|e: ProtocolError| e.to_string())
}

/// Raised by commands whose inputs were checked and found invalid.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let invalid = err.chain().any(|e| {
        e.is::<Invalid>()
            || e.is::<CorpusError>()
            || e.is::<ProtocolError>()
            || matches!(
                e.downcast_ref::<ScoringError>(),
                Some(ScoringError::MalformedSubmission { .. } | ScoringError::InvalidSubmission(_))
            )
    });
    if invalid {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let overrides = Overrides {
        seed: g.seed,
        encoder: g.encoder.clone(),
        track: g.track,
        out: g.out.clone(),
        corpus_root: g.corpus_root.clone(),
        verbosity: if g.verbose {
            Some(Verbosity::Verbose)
        } else if g.quiet {
            Some(Verbosity::Quiet)
        } else {
            None
        },
    };
    let cfg = match RunConfig::load(g.config.as_deref(), overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let level = match cfg.verbosity {
        Verbosity::Quiet => log::LevelFilter::Warn,
        Verbosity::Normal => log::LevelFilter::Info,
        Verbosity::Verbose => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();

    let ctx = commands::Context {
        cfg,
        force: g.force,
    };
    let result = ctx.record_effective(cli.command.name()).and_then(|()| match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Ingest => commands::ingest(&ctx),
        Command::Protocol => commands::protocol(&ctx),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Infer(a) => commands::infer(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::Validate(a) => commands::validate(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
