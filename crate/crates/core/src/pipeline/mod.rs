//! Inference graph around detector backends.
//!
//! Each backend runs twice per frame: once on the full frame (result A) and
//! once on an enlarged centre crop (result B). Result B is mapped back to
//! frame coordinates, large boxes are dropped from it, and A and B are merged
//! with class-aware NMS. Several backends can then be combined by picking each
//! category from a configured source.

mod backend;
mod latency;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    area, clip_to_frame, invert_transform, make_enhancement_view, CropFractions, Detection,
    FrameMeta, PerCategory, ViewTransform,
};
use crate::suppression::{class_aware_nms, class_aware_nms_indices, NmsConfig};

pub use backend::{BackendError, DetectorBackend, FailingBackend, ReplayBackend, StubBackend};
pub use latency::{percentile, FrameLatency, LatencyReport, StageMeans, DEFAULT_BUDGET_MS};

/// Backends by name. Ordered so iteration is deterministic.
pub type BackendRegistry = BTreeMap<String, Arc<dyn DetectorBackend>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancementConfig {
    /// When false only the plain pass runs (followed by class-aware NMS).
    pub enabled: bool,
    pub crop: CropFractions,
    pub scale: f64,
    pub stride: u32,
    /// Largest enhanced-pass box area, in frame pixels, allowed into the merge.
    pub small_area_max: f64,
    pub nms: NmsConfig,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        EnhancementConfig {
            enabled: true,
            crop: CropFractions::CENTER_BAND,
            scale: 1.5,
            stride: 64,
            small_area_max: 96.0 * 96.0,
            nms: NmsConfig::default(),
        }
    }
}

impl EnhancementConfig {
    /// A configuration whose second pass sees exactly the original frame.
    pub fn identity() -> Self {
        EnhancementConfig {
            crop: CropFractions::FULL,
            scale: 1.0,
            stride: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.crop.validate()?;
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "enhancement.scale {} must be positive",
                self.scale
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("enhancement.stride must be >= 1".into()));
        }
        if self.small_area_max.is_nan() || self.small_area_max <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "enhancement.small_area_max {} must be positive",
                self.small_area_max
            )));
        }
        self.nms.validate()
    }
}

/// Which backend supplies each category in the final output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub source: PerCategory<String>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            source: PerCategory::new("w6".into(), "w6".into(), "p6".into()),
        }
    }
}

impl EnsembleConfig {
    /// Every category from one backend.
    pub fn single(name: &str) -> Self {
        EnsembleConfig {
            source: PerCategory::new(name.into(), name.into(), name.into()),
        }
    }

    /// Distinct backend names, sorted.
    pub fn backends(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.source.iter().map(|(_, s)| s).collect();
        set.into_iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub enhancement: EnhancementConfig,
    pub ensemble: EnsembleConfig,
}

fn call_backend(
    backend: &dyn DetectorBackend,
    frame: &FrameMeta,
    view: &ViewTransform,
) -> Result<Vec<Detection>> {
    let wrap = |message: String| Error::Backend {
        backend: backend.name().to_string(),
        frame_id: frame.frame_id.clone(),
        camera_id: frame.camera_id.clone(),
        message,
    };
    let dets = backend.detect(frame, view).map_err(|e| wrap(e.0))?;
    for d in &dets {
        d.validate().map_err(|e| wrap(e.to_string()))?;
        if d.frame_id != frame.frame_id || d.camera_id != frame.camera_id {
            return Err(wrap(format!(
                "returned a detection for {} while processing {}",
                d.key(),
                frame.key()
            )));
        }
    }
    Ok(dets)
}

/// Result A: the backend on the unmodified frame, clipped to the frame.
pub fn run_plain_pass(backend: &dyn DetectorBackend, frame: &FrameMeta) -> Result<Vec<Detection>> {
    frame.validate()?;
    let view = ViewTransform::identity(frame);
    let mut dets = call_backend(backend, frame, &view)?;
    for d in &mut dets {
        d.bbox = clip_to_frame(&d.bbox, frame);
    }
    Ok(dets)
}

/// Result B in frame coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnhancedPass {
    pub detections: Vec<Detection>,
    /// Boxes the backend placed (partly) in the view's stride padding.
    pub padding_boxes: usize,
}

/// Result B: the backend on the enlarged crop, mapped back and clipped.
pub fn run_enhanced_pass(
    backend: &dyn DetectorBackend,
    frame: &FrameMeta,
    cfg: &EnhancementConfig,
) -> Result<EnhancedPass> {
    let view = make_enhancement_view(frame, cfg.crop, cfg.scale, cfg.stride)?;
    let content = view.content_bounds();
    let mut out = EnhancedPass::default();
    for mut d in call_backend(backend, frame, &view)? {
        if d.bbox.x2 > content.x2 || d.bbox.y2 > content.y2 {
            out.padding_boxes += 1;
        }
        d.bbox = clip_to_frame(&invert_transform(&d.bbox, &view), frame);
        out.detections.push(d);
    }
    Ok(out)
}

/// Keeps detections with `area <= max_area`.
pub fn filter_small(dets: &[Detection], max_area: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| area(&d.bbox) <= max_area)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Plain,
    Enhanced,
}

/// Merges result A with the small boxes of result B under class-aware NMS,
/// tagging each survivor with the pass it came from.
pub fn merge_passes(
    plain: &[Detection],
    enhanced: &[Detection],
    cfg: &EnhancementConfig,
) -> Result<Vec<(Detection, Provenance)>> {
    let mut pool: Vec<Detection> = plain.to_vec();
    pool.extend(filter_small(enhanced, cfg.small_area_max));
    let keep = class_aware_nms_indices(&pool, &cfg.nms)?;
    Ok(keep
        .into_iter()
        .map(|i| {
            let tag = if i < plain.len() {
                Provenance::Plain
            } else {
                Provenance::Enhanced
            };
            (pool[i].clone(), tag)
        })
        .collect())
}

#[derive(Debug, Clone, Default)]
struct StageTimes {
    plain_ms: f64,
    enhanced_ms: f64,
    merge_ms: f64,
    padding_boxes: usize,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn scale_enhanced_timed(
    backend: &dyn DetectorBackend,
    frame: &FrameMeta,
    cfg: &EnhancementConfig,
) -> Result<(Vec<Detection>, StageTimes)> {
    cfg.validate()?;
    let mut times = StageTimes::default();
    let t = Instant::now();
    let plain = run_plain_pass(backend, frame)?;
    times.plain_ms = elapsed_ms(t);
    if !cfg.enabled {
        let t = Instant::now();
        let out = class_aware_nms(&plain, &cfg.nms)?;
        times.merge_ms = elapsed_ms(t);
        return Ok((out, times));
    }
    let t = Instant::now();
    let enhanced = run_enhanced_pass(backend, frame, cfg)?;
    times.enhanced_ms = elapsed_ms(t);
    times.padding_boxes = enhanced.padding_boxes;
    let t = Instant::now();
    let merged = merge_passes(&plain, &enhanced.detections, cfg)?;
    times.merge_ms = elapsed_ms(t);
    Ok((merged.into_iter().map(|(d, _)| d).collect(), times))
}

/// Two-pass scale-enhanced detection for one backend on one frame:
/// `class_aware_nms(A ∪ filter_small(B))`.
pub fn scale_enhanced_detect(
    backend: &dyn DetectorBackend,
    frame: &FrameMeta,
    cfg: &EnhancementConfig,
) -> Result<Vec<Detection>> {
    scale_enhanced_timed(backend, frame, cfg).map(|(d, _)| d)
}

/// Takes each category from its configured source. Within a category the
/// source's order is preserved; categories are emitted vehicle, pedestrian,
/// cyclist.
pub fn classwise_ensemble(
    per_backend: &BTreeMap<String, Vec<Detection>>,
    cfg: &EnsembleConfig,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (category, source) in cfg.source.iter() {
        let dets = per_backend
            .get(source)
            .ok_or_else(|| Error::MissingBackend(source.clone()))?;
        out.extend(dets.iter().filter(|d| d.category == category).cloned());
    }
    Ok(out)
}

/// Detections plus timing for one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame: FrameMeta,
    pub detections: Vec<Detection>,
    pub latency: FrameLatency,
    pub padding_boxes: usize,
}

/// Full per-frame pipeline: scale-enhanced detection per referenced backend,
/// then class-wise ensembling.
pub fn detect_frame(
    backends: &BackendRegistry,
    frame: &FrameMeta,
    cfg: &PipelineConfig,
) -> Result<FrameResult> {
    let start = Instant::now();
    let mut latency = FrameLatency {
        frame_id: frame.frame_id.clone(),
        camera_id: frame.camera_id.clone(),
        ..Default::default()
    };
    let mut padding_boxes = 0;
    let mut per_backend = BTreeMap::new();
    for name in cfg.ensemble.backends() {
        let backend = backends
            .get(&name)
            .ok_or_else(|| Error::MissingBackend(name.clone()))?;
        let (dets, times) = scale_enhanced_timed(backend.as_ref(), frame, &cfg.enhancement)?;
        latency.plain_ms += times.plain_ms;
        latency.enhanced_ms += times.enhanced_ms;
        latency.merge_ms += times.merge_ms;
        padding_boxes += times.padding_boxes;
        per_backend.insert(name, dets);
    }
    let t = Instant::now();
    let detections = classwise_ensemble(&per_backend, &cfg.ensemble)?;
    latency.ensemble_ms = elapsed_ms(t);
    latency.total_ms = elapsed_ms(start);
    Ok(FrameResult {
        frame: frame.clone(),
        detections,
        latency,
        padding_boxes,
    })
}

/// Runs [`detect_frame`] over many frames on `jobs` worker threads. Results
/// come back ordered by `(frame_id, camera_id)` whatever the scheduling.
pub fn run_frames(
    backends: &BackendRegistry,
    frames: &[FrameMeta],
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<FrameResult>> {
    cfg.enhancement.validate()?;
    for name in cfg.ensemble.backends() {
        if !backends.contains_key(&name) {
            return Err(Error::MissingBackend(name));
        }
    }
    let mut results = if jobs <= 1 {
        frames
            .iter()
            .map(|f| detect_frame(backends, f, cfg))
            .collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| {
            frames
                .par_iter()
                .map(|f| detect_frame(backends, f, cfg))
                .collect::<Result<Vec<_>>>()
        })?
    };
    results.sort_by_key(|r| r.frame.key());
    Ok(results)
}
