pub mod anchors;
pub mod bench;
pub mod clean;
pub mod detect;
pub mod eval;
pub mod simulate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use rtdet::{Detection, FrameKey, FrameMeta};

/// A `NAME=PATH` argument.
#[derive(Debug, Clone)]
pub struct Named {
    pub name: String,
    pub path: PathBuf,
}

pub fn parse_named(s: &str) -> Result<Named> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected NAME=PATH, got `{s}`"))?;
    anyhow::ensure!(!name.is_empty(), "empty name in `{s}`");
    Ok(Named {
        name: name.to_string(),
        path: PathBuf::from(path),
    })
}

pub fn group_by_frame(dets: Vec<Detection>) -> BTreeMap<FrameKey, Vec<Detection>> {
    let mut out: BTreeMap<FrameKey, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        out.entry(d.key()).or_default().push(d);
    }
    out
}

pub fn frame_index(frames: &[FrameMeta]) -> BTreeMap<FrameKey, FrameMeta> {
    frames.iter().map(|f| (f.key(), f.clone())).collect()
}

pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

/// Writes a text artifact and mentions it on stderr.
pub fn write_artifact(path: &Path, contents: &str) -> Result<()> {
    rtdet::io::write_text(path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
