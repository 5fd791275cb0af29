//! Seeded synthetic scenes and a size-sensitive stochastic detector.
//!
//! The detector misses small objects more often than large ones, following a
//! logistic curve in the object's apparent side length. Running it on an
//! enlarged crop raises apparent sizes, which is what makes the second
//! inference pass measurable without trained models.
//!
//! Every random draw is derived from a SHA-256 digest of the seed and the
//! identifiers involved, so results do not depend on call order or threading.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{Difficulty, GroundTruthBox};
use crate::geometry::{
    apply_transform, clip_to, BBox, Category, Detection, FrameKey, FrameMeta, PerCategory,
    ViewTransform,
};
use crate::pipeline::{BackendError, DetectorBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
}

impl CameraSpec {
    pub fn new(name: impl Into<String>, width: u32, height: u32) -> Self {
        CameraSpec {
            name: name.into(),
            width,
            height,
        }
    }
}

/// Closed range `[min, max]` of box side lengths in pixels, sampled
/// log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideRange {
    pub min: f64,
    pub max: f64,
}

impl SideRange {
    fn validate(&self, what: &str) -> Result<()> {
        if self.min > 0.0 && self.max >= self.min && self.max.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{what}: need 0 < min <= max, got [{}, {}]",
                self.min, self.max
            )))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max == self.min {
            return self.min;
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        rng.random_range(lo..hi).exp()
    }
}

/// Scene generator settings.
///
/// A box's side is the geometric mean of its width and height, so its area is
/// `side²` and "small" (area below 32²) means side below 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Frames to generate; every frame is seen by every camera.
    pub frames: usize,
    pub cameras: Vec<CameraSpec>,
    /// Poisson mean of the object count per category and image.
    pub mean_objects: PerCategory<f64>,
    /// Probability that an object is drawn from `small_side`.
    pub small_fraction: f64,
    pub small_side: SideRange,
    pub large_side: SideRange,
    /// Typical `w / h` per category.
    pub aspect: PerCategory<f64>,
    /// Aspect ratios are spread log-uniformly by this factor either way.
    pub aspect_jitter: f64,
    /// Vertical band, as fractions of image height, that attracts the centres
    /// of small objects.
    pub band: (f64, f64),
    /// Probability that a small object's centre lies in `band`.
    pub band_prob: f64,
    /// Boxes with smaller area are marked difficulty 2.
    pub difficulty_area: f64,
    /// When set, a box covered by another box over at least this fraction of
    /// its own area is also marked difficulty 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occlusion_frac: Option<f64>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frames: 200,
            cameras: vec![
                CameraSpec::new("FRONT", 1920, 1280),
                CameraSpec::new("SIDE_LEFT", 1920, 886),
            ],
            mean_objects: PerCategory::new(8.0, 5.0, 1.0),
            small_fraction: 1.0 / 3.0,
            small_side: SideRange { min: 8.0, max: 32.0 },
            large_side: SideRange {
                min: 32.0,
                max: 400.0,
            },
            aspect: PerCategory::new(1.4, 0.4, 0.6),
            aspect_jitter: 1.25,
            band: (0.3, 0.8),
            band_prob: 0.9,
            difficulty_area: 256.0,
            occlusion_frac: None,
            seed: 42,
        }
    }
}

fn unit(v: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} must lie in [0, 1], got {v}")))
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one camera".into()));
        }
        for cam in &self.cameras {
            FrameMeta::new("frame", cam.name.clone(), cam.width, cam.height)?;
        }
        for (c, &m) in self.mean_objects.iter() {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "mean object count for {c} must be non-negative, got {m}"
                )));
            }
        }
        for (c, &a) in self.aspect.iter() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "aspect ratio for {c} must be positive, got {a}"
                )));
            }
        }
        if !(self.aspect_jitter >= 1.0 && self.aspect_jitter.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "aspect_jitter must be at least 1, got {}",
                self.aspect_jitter
            )));
        }
        self.small_side.validate("small_side")?;
        self.large_side.validate("large_side")?;
        unit(self.small_fraction, "small_fraction")?;
        unit(self.band_prob, "band_prob")?;
        unit(self.band.0, "band start")?;
        unit(self.band.1, "band end")?;
        if self.band.0 >= self.band.1 {
            return Err(Error::InvalidConfig(format!(
                "band must be increasing, got ({}, {})",
                self.band.0, self.band.1
            )));
        }
        if self.difficulty_area.is_nan() || self.difficulty_area < 0.0 {
            return Err(Error::InvalidConfig("difficulty_area must be non-negative".into()));
        }
        if let Some(f) = self.occlusion_frac {
            unit(f, "occlusion_frac")?;
        }
        Ok(())
    }
}

/// Generated frames and their annotations, both ordered by
/// `(frame_id, camera_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<FrameMeta>,
    pub gts: Vec<GroundTruthBox>,
}

/// A ChaCha8 generator keyed by the SHA-256 of `seed` and `parts`.
fn derived_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn poisson(rng: &mut impl Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("validated mean");
    d.sample(rng) as usize
}

fn sample_object(
    rng: &mut impl Rng,
    cfg: &SceneConfig,
    category: Category,
    frame: &FrameMeta,
) -> BBox {
    let (fw, fh) = (f64::from(frame.width), f64::from(frame.height));
    let small = rng.random::<f64>() < cfg.small_fraction;
    let side = if small {
        cfg.small_side.sample(rng)
    } else {
        cfg.large_side.sample(rng)
    };
    let j = cfg.aspect_jitter.ln();
    let jitter = if j > 0.0 { rng.random_range(-j..j).exp() } else { 1.0 };
    let aspect = cfg.aspect[category] * jitter;
    let mut w = side * aspect.sqrt();
    let mut h = side / aspect.sqrt();
    // Shrink uniformly so the box fits; keeps the aspect ratio.
    let fit = (fw / w).min(fh / h).min(1.0);
    w *= fit;
    h *= fit;
    let cx = if fw > w { rng.random_range(w / 2.0..=fw - w / 2.0) } else { fw / 2.0 };
    let in_band = small && rng.random::<f64>() < cfg.band_prob;
    let (lo, hi) = if in_band {
        (cfg.band.0 * fh, cfg.band.1 * fh)
    } else {
        (0.0, fh)
    };
    let lo = lo.max(h / 2.0);
    let hi = hi.min(fh - h / 2.0);
    let cy = if hi > lo { rng.random_range(lo..=hi) } else { (lo + hi) / 2.0 };
    BBox {
        x1: cx - w / 2.0,
        y1: cy - h / 2.0,
        x2: cx + w / 2.0,
        y2: cy + h / 2.0,
    }
}

fn occluded(boxes: &[BBox], i: usize, frac: f64) -> bool {
    let own = boxes[i].area();
    boxes.iter().enumerate().any(|(j, other)| {
        j != i
            && boxes[i]
                .intersection(other)
                .is_some_and(|inter| inter.area() >= frac * own)
    })
}

/// Generates frames and annotations. A pure function of `cfg`.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut frames = Vec::new();
    let mut gts = Vec::new();
    for f in 0..cfg.frames {
        let frame_id = format!("frame_{f:05}");
        for cam in &cfg.cameras {
            let meta = FrameMeta::new(frame_id.clone(), cam.name.clone(), cam.width, cam.height)?;
            let mut rng = derived_rng(cfg.seed, &[b"scene", frame_id.as_bytes(), cam.name.as_bytes()]);
            let mut objects = Vec::new();
            for (category, &mean) in cfg.mean_objects.iter() {
                for _ in 0..poisson(&mut rng, mean) {
                    objects.push((category, sample_object(&mut rng, cfg, category, &meta)));
                }
            }
            let boxes: Vec<BBox> = objects.iter().map(|o| o.1).collect();
            for (n, (category, bbox)) in objects.iter().enumerate() {
                let hard = bbox.area() < cfg.difficulty_area
                    || cfg.occlusion_frac.is_some_and(|fr| occluded(&boxes, n, fr));
                gts.push(GroundTruthBox {
                    frame_id: frame_id.clone(),
                    camera_id: cam.name.clone(),
                    id: format!("{frame_id}.{}.{n:03}", cam.name),
                    category: *category,
                    difficulty: if hard { Difficulty::Level2 } else { Difficulty::Level1 },
                    bbox: *bbox,
                });
            }
            frames.push(meta);
        }
    }
    frames.sort_by_key(|f| f.key());
    gts.sort_by(|a, b| a.key().cmp(&b.key()).then_with(|| a.id.cmp(&b.id)));
    Ok(Dataset { frames, gts })
}

/// Behaviour of the synthetic detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDetectorConfig {
    /// Apparent side (pixels) detected with probability one half.
    pub s0: f64,
    /// Logistic width in pixels.
    pub tau: f64,
    /// Corner noise standard deviation as a fraction of apparent side.
    pub noise_frac: f64,
    /// Score of a hopeless object; scores rise to `score_hi` with detection
    /// probability.
    pub score_lo: f64,
    pub score_hi: f64,
    /// Standard deviation of the additive score noise.
    pub score_jitter: f64,
    /// Poisson mean of false positives per view.
    pub fp_rate: f64,
    /// False positive sides in view pixels.
    pub fp_side: SideRange,
    pub fp_score_max: f64,
    /// Objects with less of their area inside the view are never detected.
    pub min_visible_frac: f64,
    /// Detect every visible object regardless of size.
    pub detect_all: bool,
    pub seed: u64,
}

impl Default for SyntheticDetectorConfig {
    fn default() -> Self {
        SyntheticDetectorConfig {
            s0: 24.0,
            tau: 8.0,
            noise_frac: 0.03,
            score_lo: 0.2,
            score_hi: 0.95,
            score_jitter: 0.05,
            fp_rate: 1.0,
            fp_side: SideRange {
                min: 8.0,
                max: 128.0,
            },
            fp_score_max: 0.4,
            min_visible_frac: 0.0,
            detect_all: false,
            seed: 42,
        }
    }
}

impl SyntheticDetectorConfig {
    /// Noise-free, miss-free, false-positive-free detector.
    pub fn perfect() -> Self {
        SyntheticDetectorConfig {
            noise_frac: 0.0,
            score_jitter: 0.0,
            fp_rate: 0.0,
            detect_all: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.s0.is_finite() {
            return Err(Error::InvalidConfig("s0 must be finite".into()));
        }
        for (v, what) in [
            (self.noise_frac, "noise_frac"),
            (self.score_jitter, "score_jitter"),
            (self.fp_rate, "fp_rate"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{what} must be non-negative, got {v}")));
            }
        }
        unit(self.score_lo, "score_lo")?;
        unit(self.score_hi, "score_hi")?;
        unit(self.fp_score_max, "fp_score_max")?;
        unit(self.min_visible_frac, "min_visible_frac")?;
        self.fp_side.validate("fp_side")
    }
}

/// `1 / (1 + exp(-(side - s0) / tau))`.
pub fn detection_probability(apparent_side: f64, cfg: &SyntheticDetectorConfig) -> f64 {
    1.0 / (1.0 + (-(apparent_side - cfg.s0) / cfg.tau).exp())
}

fn view_tag(view: &ViewTransform) -> Vec<u8> {
    let mut tag = Vec::with_capacity(56);
    tag.extend(view.out_width.to_le_bytes());
    tag.extend(view.out_height.to_le_bytes());
    for v in [view.crop.x1, view.crop.y1, view.crop.x2, view.crop.y2, view.scale] {
        tag.extend(v.to_bits().to_le_bytes());
    }
    tag
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Perturbs corners, restores corner order, clips, and drops degenerate boxes.
fn noisy_box(rng: &mut impl Rng, b: &BBox, sigma: f64, bounds: &BBox) -> Option<BBox> {
    let mut c = [b.x1, b.y1, b.x2, b.y2];
    if sigma > 0.0 {
        for v in &mut c {
            *v += sigma * normal(rng);
        }
    }
    let raw = BBox {
        x1: c[0].min(c[2]),
        y1: c[1].min(c[3]),
        x2: c[0].max(c[2]),
        y2: c[1].max(c[3]),
    };
    let out = clip_to(&raw, bounds);
    (out.area() > 0.0).then_some(out)
}

/// Runs the synthetic detector on one view of one frame.
///
/// Returned boxes are in view coordinates and lie within the view's content
/// region. Scores lie in `[0, 1]`.
pub fn synthetic_detect(
    frame: &FrameMeta,
    view: &ViewTransform,
    gts: &[GroundTruthBox],
    cfg: &SyntheticDetectorConfig,
) -> Vec<Detection> {
    let content = view.content_bounds();
    let tag = view_tag(view);
    let key = [frame.frame_id.as_bytes(), frame.camera_id.as_bytes(), &tag];
    let mut out = Vec::new();
    for gt in gts {
        let mapped = apply_transform(&gt.bbox, view);
        let visible = clip_to(&mapped, &content);
        let (full, seen) = (mapped.area(), visible.area());
        if seen <= 0.0 || seen < cfg.min_visible_frac * full {
            continue;
        }
        let side = seen.sqrt();
        let p = detection_probability(side, cfg);
        let mut rng = derived_rng(cfg.seed, &[key[0], key[1], key[2], b"gt", gt.id.as_bytes()]);
        let u: f64 = rng.random();
        if !cfg.detect_all && u >= p {
            continue;
        }
        let Some(bbox) = noisy_box(&mut rng, &visible, cfg.noise_frac * side, &content) else {
            continue;
        };
        let jitter = if cfg.score_jitter > 0.0 { cfg.score_jitter * normal(&mut rng) } else { 0.0 };
        let score = (cfg.score_lo + (cfg.score_hi - cfg.score_lo) * p + jitter).clamp(0.0, 1.0);
        out.push(Detection::new(frame, gt.category, score, bbox));
    }
    let mut rng = derived_rng(cfg.seed, &[key[0], key[1], key[2], b"fp"]);
    for _ in 0..poisson(&mut rng, cfg.fp_rate) {
        let category = Category::ALL[rng.random_range(0..Category::ALL.len())];
        let side = cfg.fp_side.sample(&mut rng);
        let aspect = rng.random_range(0.5f64.ln()..2.0f64.ln()).exp();
        let (w, h) = (side * aspect.sqrt(), side / aspect.sqrt());
        let cx = rng.random_range(content.x1..content.x2);
        let cy = rng.random_range(content.y1..content.y2);
        let raw = BBox {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        };
        let score = rng.random_range(0.0..=cfg.fp_score_max);
        let bbox = clip_to(&raw, &content);
        if bbox.area() > 0.0 {
            out.push(Detection::new(frame, category, score, bbox));
        }
    }
    out
}

/// [`synthetic_detect`] over a fixed annotation set, as a pipeline backend.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    name: String,
    cfg: SyntheticDetectorConfig,
    gts: HashMap<FrameKey, Vec<GroundTruthBox>>,
}

impl SyntheticBackend {
    pub fn new(
        name: impl Into<String>,
        cfg: SyntheticDetectorConfig,
        gts: impl IntoIterator<Item = GroundTruthBox>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut by_frame: HashMap<FrameKey, Vec<GroundTruthBox>> = HashMap::new();
        for g in gts {
            by_frame.entry(g.key()).or_default().push(g);
        }
        Ok(SyntheticBackend {
            name: name.into(),
            cfg,
            gts: by_frame,
        })
    }
}

impl DetectorBackend for SyntheticBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(
        &self,
        frame: &FrameMeta,
        view: &ViewTransform,
    ) -> std::result::Result<Vec<Detection>, BackendError> {
        let gts = self.gts.get(&frame.key()).map(Vec::as_slice).unwrap_or(&[]);
        Ok(synthetic_detect(frame, view, gts, &self.cfg))
    }
}
