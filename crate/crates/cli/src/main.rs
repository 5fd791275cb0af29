//! `rtdet`: runs the detection pipeline stages over JSONL files.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rtdet::config::{resolve_seed, RunConfig, SEED_ENV};

#[derive(Debug, Parser)]
#[command(name = "rtdet", version, about = "Real-time 2D detection pipeline tooling")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every seeded stage. Beats the config file, which beats
    /// the RTDET_SEED environment variable.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-frame work.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Print the default configuration document and exit.
    #[arg(long)]
    print_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: ground truth and frame index.
    Simulate(commands::simulate::Args),
    /// Two-pass scale-enhanced detection with one backend.
    Enhance(commands::detect::EnhanceArgs),
    /// Class-aware NMS over a detection file.
    Nms(commands::detect::NmsArgs),
    /// Pick each category from its configured source detection file.
    Ensemble(commands::detect::EnsembleArgs),
    /// Average precision at L1 and/or L2.
    Eval(commands::eval::Args),
    /// K-means anchors from ground truth box sizes.
    Anchors(commands::anchors::AnchorArgs),
    /// Grid of small-object centre positions.
    Heatmap(commands::anchors::HeatmapArgs),
    /// Drop ground truth boxes that too few models detect.
    Clean(commands::clean::Args),
    /// Time the full pipeline against the per-frame budget.
    Bench(commands::bench::Args),
}

/// Settings shared by every subcommand after flags, file and environment
/// are merged.
pub struct Ctx {
    pub cfg: RunConfig,
    pub jobs: usize,
}

fn load_context(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        // `simulate` writes the files that backends may point at.
        Some(path) if matches!(cli.command, Some(Command::Simulate(_))) => RunConfig::load_unchecked(path)?,
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    if cli.seed.is_some() || cfg.seed.is_some() || env.as_deref().is_some_and(|s| !s.trim().is_empty()) {
        let seed = resolve_seed(cli.seed, cfg.seed, env.as_deref())?;
        cfg.apply_seed(seed);
    }
    let jobs = cli.jobs.unwrap_or(cfg.jobs);
    anyhow::ensure!(jobs >= 1, "--jobs must be at least 1");
    Ok(Ctx { cfg, jobs })
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.print_default_config {
        print!("{}", RunConfig::default_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let ctx = load_context(&cli).context("loading configuration")?;
    let Some(command) = cli.command else {
        anyhow::bail!("no subcommand given; see --help");
    };
    match command {
        Command::Simulate(a) => commands::simulate::run(&ctx, a),
        Command::Enhance(a) => commands::detect::enhance(&ctx, a),
        Command::Nms(a) => commands::detect::nms(&ctx, a),
        Command::Ensemble(a) => commands::detect::ensemble(&ctx, a),
        Command::Eval(a) => commands::eval::run(&ctx, a),
        Command::Anchors(a) => commands::anchors::anchors(&ctx, a),
        Command::Heatmap(a) => commands::anchors::heatmap(&ctx, a),
        Command::Clean(a) => commands::clean::run(&ctx, a),
        Command::Bench(a) => return commands::bench::run(&ctx, a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
