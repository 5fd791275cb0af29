use std::path::PathBuf;

use anyhow::Result;
use rtdet::anchors::{
    center_heatmap, gt_dims, kmeans_anchors, small_subset_by, AnchorSet, CentroidUpdate,
    DistanceMetric, SmallRule,
};
use rtdet::io::{read_frames, read_ground_truth};

use super::{frame_index, write_artifact};
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct AnchorArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Overrides `kmeans.k`.
    #[arg(long)]
    k: Option<usize>,
    /// Cluster only small boxes (see `--small-area` / `--small-side`).
    #[arg(long)]
    small_only: bool,
    /// Small means `w * h` below this.
    #[arg(long, default_value_t = 4096.0, conflicts_with = "small_side")]
    small_area: f64,
    /// Small means both sides below this.
    #[arg(long)]
    small_side: Option<f64>,
    #[arg(long, value_parser = parse_metric)]
    metric: Option<DistanceMetric>,
    #[arg(long, value_parser = parse_update)]
    update: Option<CentroidUpdate>,
    /// Anchor list, one `w,h` per line, smallest area first.
    #[arg(long)]
    out: PathBuf,
}

fn parse_metric(s: &str) -> Result<DistanceMetric, String> {
    match s {
        "iou" => Ok(DistanceMetric::Iou),
        "euclidean" => Ok(DistanceMetric::Euclidean),
        _ => Err(format!("unknown metric `{s}` (iou, euclidean)")),
    }
}

fn parse_update(s: &str) -> Result<CentroidUpdate, String> {
    match s {
        "mean" => Ok(CentroidUpdate::Mean),
        "medoid" => Ok(CentroidUpdate::Medoid),
        _ => Err(format!("unknown update `{s}` (mean, medoid)")),
    }
}

pub fn anchors(ctx: &Ctx, args: AnchorArgs) -> Result<()> {
    let gts = read_ground_truth(&args.gt)?;
    let mut dims = gt_dims(&gts);
    if args.small_only {
        let rule = args.small_side.map_or(SmallRule::Area(args.small_area), SmallRule::Side);
        dims = small_subset_by(&dims, rule);
    }
    let mut cfg = ctx.cfg.kmeans.clone();
    cfg.k = args.k.unwrap_or(cfg.k);
    cfg.metric = args.metric.unwrap_or(cfg.metric);
    cfg.update = args.update.unwrap_or(cfg.update);
    let outcome = kmeans_anchors(&dims, &cfg)?;
    write_artifact(&args.out, &outcome.anchors.to_text())?;
    println!("boxes clustered   {}", dims.len());
    println!("{outcome}");
    if let Some(r) = AnchorSet::yolor_p6().smallest_aspect_ratio() {
        println!("baseline smallest w/h {r:.3}");
    }
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 16)]
    grid_w: usize,
    #[arg(long, default_value_t = 10)]
    grid_h: usize,
    /// Only boxes with smaller area are counted.
    #[arg(long, default_value_t = 1024.0)]
    small_area: f64,
    /// Counts as CSV, `grid_h` rows of `grid_w` cells, top row first.
    #[arg(long)]
    out: PathBuf,
}

pub fn heatmap(ctx: &Ctx, args: HeatmapArgs) -> Result<()> {
    let gts = read_ground_truth(&args.gt)?;
    let frames = frame_index(&read_frames(&args.frames)?);
    let grid = center_heatmap(&gts, &frames, args.grid_w, args.grid_h, args.small_area)?;
    write_artifact(&args.out, &grid.to_csv())?;
    let crop = ctx.cfg.enhancement.crop;
    println!("small boxes       {}", grid.total);
    println!("grid              {}x{}", grid.grid_w, grid.grid_h);
    println!(
        "in band {:.2}-{:.2}   {:.4}",
        crop.y_lo,
        crop.y_hi,
        grid.band_fraction(crop.y_lo, crop.y_hi)
    );
    Ok(())
}
