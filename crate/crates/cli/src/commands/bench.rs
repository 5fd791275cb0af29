use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Result;
use rtdet::io::{read_frames, write_detections};
use rtdet::pipeline::{run_frames, EnsembleConfig, LatencyReport, StubBackend};
use rtdet::simulate::generate_dataset;
use rtdet::Detection;

use super::write_artifact;
use crate::Ctx;

/// Exit status when the mean frame time exceeds the budget.
const OVER_BUDGET: u8 = 2;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Frame index; without it the configured scene's frames are used.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Only the first N frames (by frame and camera id).
    #[arg(long)]
    max_frames: Option<usize>,
    /// Replace every backend by a single stub that sleeps this long per
    /// call and returns nothing. Every category is routed to it.
    #[arg(long)]
    stub_sleep_ms: Option<u64>,
    /// Overrides `budget_ms`.
    #[arg(long)]
    budget_ms: Option<f64>,
    /// Per-frame timings as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Copy of the text summary.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Final ensembled detections.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<ExitCode> {
    let budget = args.budget_ms.unwrap_or(ctx.cfg.budget_ms);
    anyhow::ensure!(budget > 0.0 && budget.is_finite(), "--budget-ms must be positive");
    let mut frames = match &args.frames {
        Some(p) => read_frames(p)?,
        None => generate_dataset(&ctx.cfg.scene)?.frames,
    };
    frames.sort_by_key(|f| f.key());
    if let Some(n) = args.max_frames {
        frames.truncate(n);
    }
    let mut pipeline = ctx.cfg.pipeline();
    let backends = match args.stub_sleep_ms {
        Some(ms) => {
            pipeline.ensemble = EnsembleConfig::single("stub");
            let stub = StubBackend::new("stub", Duration::from_millis(ms));
            std::iter::once(("stub".to_string(), Arc::new(stub) as _)).collect()
        }
        None => ctx.cfg.build_backends()?,
    };
    let results = run_frames(&backends, &frames, &pipeline, ctx.jobs)?;
    let padding: usize = results.iter().map(|r| r.padding_boxes).sum();
    let mut rows = Vec::with_capacity(results.len());
    let mut dets: Vec<Detection> = Vec::new();
    for r in results {
        rows.push(r.latency);
        dets.extend(r.detections);
    }
    let report = LatencyReport::from_rows(rows, budget);
    let text = format!("{report}\npadding boxes     {padding}\n");
    print!("{text}");
    if let Some(p) = &args.report {
        write_artifact(p, &report.to_csv())?;
    }
    if let Some(p) = &args.summary {
        write_artifact(p, &text)?;
    }
    if let Some(p) = &args.out {
        write_detections(p, &dets, false)?;
    }
    if report.within_budget() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: mean frame time {:.3} ms exceeds the {budget} ms budget",
            report.mean.total_ms
        );
        Ok(ExitCode::from(OVER_BUDGET))
    }
}
