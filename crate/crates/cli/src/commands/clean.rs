use std::path::PathBuf;

use anyhow::Result;
use rtdet::cleaning::consensus_clean;
use rtdet::io::{read_detections, read_ground_truth, write_ground_truth};

use super::{parse_named, write_artifact, Named};
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    gt: PathBuf,
    /// One detection set per model as NAME=PATH.
    #[arg(long = "det", value_name = "NAME=PATH", value_parser = parse_named, required = true)]
    dets: Vec<Named>,
    /// Overrides `clean.min_models`.
    #[arg(long)]
    min_models: Option<usize>,
    #[arg(long)]
    iou_min: Option<f64>,
    #[arg(long)]
    score_min: Option<f64>,
    /// Ground truth that survives.
    #[arg(long)]
    out_gt: PathBuf,
    /// Ground truth that was dropped.
    #[arg(long)]
    removed: Option<PathBuf>,
    /// Per-box evidence CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<()> {
    let mut cfg = ctx.cfg.clean.clone();
    cfg.min_models = args.min_models.unwrap_or(cfg.min_models);
    cfg.iou_min = args.iou_min.unwrap_or(cfg.iou_min);
    cfg.score_min = args.score_min.unwrap_or(cfg.score_min);
    let gts = read_ground_truth(&args.gt)?;
    let sets = args
        .dets
        .iter()
        .map(|n| read_detections(&n.path))
        .collect::<rtdet::Result<Vec<_>>>()?;
    let outcome = consensus_clean(&gts, &sets, &cfg)?;
    write_ground_truth(&args.out_gt, &outcome.kept, false)?;
    if let Some(p) = &args.removed {
        write_ground_truth(p, &outcome.removed, false)?;
    }
    if let Some(p) = &args.report {
        write_artifact(p, &outcome.report_csv())?;
    }
    let names: Vec<&str> = args.dets.iter().map(|n| n.name.as_str()).collect();
    println!("models            {}", names.join(", "));
    println!("min_models        {}", cfg.min_models);
    println!("kept              {}", outcome.kept.len());
    println!("removed           {}", outcome.removed.len());
    Ok(())
}
