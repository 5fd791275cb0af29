use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;
use rtdet::io::{read_detections, read_frames, read_ground_truth, write_detections};
use rtdet::pipeline::{classwise_ensemble, scale_enhanced_detect, DetectorBackend, ReplayBackend};
use rtdet::simulate::SyntheticBackend;
use rtdet::suppression::class_aware_nms;
use rtdet::{Detection, Error};

use super::{group_by_frame, parse_named, pool, Named};
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct EnhanceArgs {
    /// Frame index (JSONL of frame_id, camera_id, width, height).
    #[arg(long)]
    frames: PathBuf,
    /// Backend from the config's `[backends]` table, or the name given to
    /// an ad-hoc backend built from `--plain` or `--synthetic-gt`.
    #[arg(long)]
    backend: Option<String>,
    /// Replay detections for the plain pass, in frame coordinates.
    #[arg(long, conflicts_with = "synthetic_gt")]
    plain: Option<PathBuf>,
    /// Replay detections for the enlarged-crop pass, in view coordinates.
    #[arg(long, requires = "plain")]
    enhanced: Option<PathBuf>,
    /// Run the synthetic detector over this ground truth.
    #[arg(long)]
    synthetic_gt: Option<PathBuf>,
    /// Plain pass plus NMS only.
    #[arg(long)]
    no_enhance: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    round_px: bool,
}

fn pick_backend(ctx: &Ctx, args: &EnhanceArgs) -> Result<Arc<dyn DetectorBackend>> {
    if let Some(plain) = &args.plain {
        let name = args.backend.clone().unwrap_or_else(|| "replay".into());
        let mut r = ReplayBackend::new(name).with_plain(read_detections(plain)?);
        if let Some(e) = &args.enhanced {
            r = r.with_enhanced(read_detections(e)?);
        }
        return Ok(Arc::new(r));
    }
    if let Some(gt) = &args.synthetic_gt {
        let name = args.backend.clone().unwrap_or_else(|| "synthetic".into());
        let b = SyntheticBackend::new(name, ctx.cfg.synthetic.clone(), read_ground_truth(gt)?)?;
        return Ok(Arc::new(b));
    }
    let name = args
        .backend
        .as_ref()
        .context("one of --backend, --plain or --synthetic-gt is required")?;
    let mut reg = ctx.cfg.build_backends()?;
    reg.remove(name)
        .ok_or_else(|| Error::MissingBackend(name.clone()).into())
}

pub fn enhance(ctx: &Ctx, args: EnhanceArgs) -> Result<()> {
    let backend = pick_backend(ctx, &args)?;
    let mut frames = read_frames(&args.frames)?;
    frames.sort_by_key(|f| f.key());
    let mut cfg = ctx.cfg.enhancement.clone();
    if args.no_enhance {
        cfg.enabled = false;
    }
    cfg.validate()?;
    let per_frame: Vec<Vec<Detection>> = pool(ctx.jobs)?.install(|| {
        frames
            .par_iter()
            .map(|f| scale_enhanced_detect(backend.as_ref(), f, &cfg))
            .collect::<rtdet::Result<_>>()
    })?;
    let dets: Vec<Detection> = per_frame.into_iter().flatten().collect();
    write_detections(&args.out, &dets, args.round_px)?;
    println!("backend           {}", backend.name());
    println!("images            {}", frames.len());
    println!("detections        {}", dets.len());
    println!("second pass       {}", if cfg.enabled { "on" } else { "off" });
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct NmsArgs {
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `enhancement.nms.min_score`.
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long)]
    round_px: bool,
}

pub fn nms(ctx: &Ctx, args: NmsArgs) -> Result<()> {
    let mut cfg = ctx.cfg.enhancement.nms.clone();
    if let Some(s) = args.min_score {
        cfg.min_score = s;
    }
    cfg.validate()?;
    let input = read_detections(&args.det)?;
    let n_in = input.len();
    let frames: Vec<Vec<Detection>> = group_by_frame(input).into_values().collect();
    let kept: Vec<Vec<Detection>> = pool(ctx.jobs)?.install(|| {
        frames
            .par_iter()
            .map(|f| class_aware_nms(f, &cfg))
            .collect::<rtdet::Result<_>>()
    })?;
    let out: Vec<Detection> = kept.into_iter().flatten().collect();
    write_detections(&args.out, &out, args.round_px)?;
    println!("detections in     {n_in}");
    println!("detections kept   {}", out.len());
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct EnsembleArgs {
    /// Detection set per backend as NAME=PATH; repeat for each source.
    #[arg(long = "input", value_name = "NAME=PATH", value_parser = parse_named, required = true)]
    inputs: Vec<Named>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    round_px: bool,
}

pub fn ensemble(ctx: &Ctx, args: EnsembleArgs) -> Result<()> {
    let cfg = &ctx.cfg.ensemble;
    let mut sets = BTreeMap::new();
    for n in &args.inputs {
        anyhow::ensure!(!sets.contains_key(&n.name), "input `{}` given twice", n.name);
        sets.insert(n.name.clone(), group_by_frame(read_detections(&n.path)?));
    }
    for name in cfg.backends() {
        if !sets.contains_key(&name) {
            return Err(Error::MissingBackend(name).into());
        }
    }
    let keys: BTreeSet<_> = sets.values().flat_map(|m| m.keys().cloned()).collect();
    let mut out = Vec::new();
    for key in keys {
        let per_backend: BTreeMap<String, Vec<Detection>> = sets
            .iter()
            .map(|(name, m)| (name.clone(), m.get(&key).cloned().unwrap_or_default()))
            .collect();
        out.extend(classwise_ensemble(&per_backend, cfg)?);
    }
    write_detections(&args.out, &out, args.round_px)?;
    for (c, source) in cfg.source.iter() {
        println!("{c:<17} {source}");
    }
    println!("detections        {}", out.len());
    Ok(())
}
