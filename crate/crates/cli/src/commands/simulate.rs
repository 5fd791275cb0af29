use std::path::PathBuf;

use anyhow::Result;
use rtdet::evaluation::Difficulty;
use rtdet::io::{write_frames, write_ground_truth};
use rtdet::simulate::generate_dataset;

use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory receiving `gt.jsonl` and `frames.jsonl`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides `scene.frames`.
    #[arg(long)]
    frames: Option<usize>,
    /// Snap boxes to whole pixels.
    #[arg(long)]
    round_px: bool,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<()> {
    let mut scene = ctx.cfg.scene.clone();
    if let Some(n) = args.frames {
        scene.frames = n;
    }
    let data = generate_dataset(&scene)?;
    let gt_path = args.out_dir.join("gt.jsonl");
    let frames_path = args.out_dir.join("frames.jsonl");
    write_ground_truth(&gt_path, &data.gts, args.round_px)?;
    write_frames(&frames_path, &data.frames)?;
    let small = data.gts.iter().filter(|g| g.bbox.area() < 1024.0).count();
    let hard = data.gts.iter().filter(|g| g.difficulty == Difficulty::Level2).count();
    println!("images            {}", data.frames.len());
    println!("objects           {}", data.gts.len());
    println!("small (<32x32)    {small}");
    println!("difficulty 2      {hard}");
    println!("seed              {}", scene.seed);
    eprintln!("wrote {} and {}", gt_path.display(), frames_path.display());
    Ok(())
}
