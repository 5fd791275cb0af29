//! JSON Lines files for detections, ground truth and frame metadata.
//!
//! One record per line, UTF-8, LF endings. Blank lines are skipped on read.
//! Floats are written in shortest round-trip form, so a write followed by a
//! read reproduces every field exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::GroundTruthBox;
use crate::geometry::{Detection, FrameMeta};

/// Parses JSON Lines text. `path` only labels errors.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads records and applies `check` to each, reporting failures by line.
fn read_checked<T: DeserializeOwned>(
    path: &Path,
    check: impl Fn(&T) -> Result<()>,
) -> Result<Vec<T>> {
    let text = read_to_string(path)?;
    let records: Vec<T> = parse_jsonl(&text, path)?;
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, _)| n + 1);
    for (rec, line) in records.iter().zip(lines) {
        check(rec).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
    }
    Ok(records)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_checked(path, Detection::validate)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthBox>> {
    read_checked(path, |g: &GroundTruthBox| g.bbox.validate())
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameMeta>> {
    read_checked(path, FrameMeta::validate)
}

/// Serializes records, one per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize to JSON"));
        out.push('\n');
    }
    out
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_text(path, &to_jsonl(records))
}

/// Stable sort by `(frame_id, camera_id)`; order within a frame is kept.
pub fn sort_by_frame(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        (a.frame_id.as_str(), a.camera_id.as_str()).cmp(&(b.frame_id.as_str(), b.camera_id.as_str()))
    });
}

/// Writes detections ordered by frame, optionally snapped to whole pixels.
pub fn write_detections(path: &Path, dets: &[Detection], round_px: bool) -> Result<()> {
    let mut out = dets.to_vec();
    sort_by_frame(&mut out);
    if round_px {
        for d in &mut out {
            d.bbox = d.bbox.rounded();
        }
    }
    write_jsonl(path, &out)
}

pub fn write_ground_truth(path: &Path, gts: &[GroundTruthBox], round_px: bool) -> Result<()> {
    let mut out = gts.to_vec();
    out.sort_by_key(|g| g.key());
    if round_px {
        for g in &mut out {
            g.bbox = g.bbox.rounded();
        }
    }
    write_jsonl(path, &out)
}

pub fn write_frames(path: &Path, frames: &[FrameMeta]) -> Result<()> {
    let mut out = frames.to_vec();
    out.sort_by_key(|f| f.key());
    write_jsonl(path, &out)
}
