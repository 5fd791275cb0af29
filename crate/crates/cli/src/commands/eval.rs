use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::ValueEnum;
use rtdet::evaluation::{evaluate, results_to_csv, size_recall, EvalConfig};
use rtdet::io::{read_detections, read_ground_truth};
use rtdet::Level;

use super::write_artifact;
use crate::Ctx;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    L1,
    L2,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    /// Defaults to the config's `eval.level`.
    #[arg(long, value_enum)]
    level: Option<LevelArg>,
    /// Also report recall of ground truth smaller than this area.
    #[arg(long, default_value_t = 1024.0)]
    small_area: f64,
    /// CSV with one row per level and category.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Copy of the text summary.
    #[arg(long)]
    summary: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<()> {
    let gts = read_ground_truth(&args.gt)?;
    let dets = read_detections(&args.det)?;
    let levels = match args.level {
        None => vec![ctx.cfg.eval.level],
        Some(LevelArg::L1) => vec![Level::L1],
        Some(LevelArg::L2) => vec![Level::L2],
        Some(LevelArg::Both) => vec![Level::L1, Level::L2],
    };
    let mut results = Vec::new();
    let mut text = String::new();
    for level in levels {
        let cfg = EvalConfig {
            level,
            ..ctx.cfg.eval.clone()
        };
        let r = evaluate(&dets, &gts, &cfg)?;
        let small = size_recall(&dets, &gts, &cfg, args.small_area)?;
        writeln!(text, "{r}")?;
        match small.recall() {
            Some(v) => writeln!(
                text,
                "{level:<6} small recall (area < {}) {v:.4} ({}/{})\n",
                args.small_area, small.matched, small.positives
            )?,
            None => writeln!(text, "{level:<6} small recall: no small positives\n")?,
        }
        results.push(r);
    }
    print!("{text}");
    if let Some(p) = &args.csv {
        write_artifact(p, &results_to_csv(&results))?;
    }
    if let Some(p) = &args.summary {
        write_artifact(p, &text)?;
    }
    Ok(())
}
