//! Bounding-box algebra and the crop/rescale view transforms.
//!
//! Coordinates are real-valued pixels with the origin at the image top-left,
//! x growing right and y growing down. Nothing here touches pixels; a
//! [`ViewTransform`] only describes how coordinates move between the original
//! frame and a detector-input view.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values within this distance of an integer are treated as that integer when
/// rounding crop bounds and output dimensions. `0.8 * 1280` is
/// `1024.0000000000001` in binary floating point.
const SNAP_EPS: f64 = 1e-9;

/// Axis-aligned rectangle `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite or inverted coordinates.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn validate(&self) -> Result<()> {
        let reason = if ![self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
        {
            Some("coordinates must be finite")
        } else if self.x1 > self.x2 {
            Some("x1 > x2")
        } else if self.y1 > self.y2 {
            Some("y1 > y2")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
                reason,
            }),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    /// Overlap rectangle, or `None` when the boxes do not intersect with
    /// positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x2 > x1 && y2 > y1).then_some(BBox { x1, y1, x2, y2 })
    }

    /// Rounds every coordinate to the nearest integer pixel.
    pub fn rounded(&self) -> BBox {
        BBox {
            x1: self.x1.round(),
            y1: self.y1.round(),
            x2: self.x2.round(),
            y2: self.y2.round(),
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// `(x2 - x1) * (y2 - y1)`; zero for degenerate boxes.
pub fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1).max(0.0) * (b.y2 - b.y1).max(0.0)
}

/// Intersection over union. Defined as 0 whenever the union is empty, so
/// degenerate boxes never match anything.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Object categories of the detection task.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Vehicle, Category::Pedestrian, Category::Cyclist];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Vehicle => "vehicle",
            Category::Pedestrian => "pedestrian",
            Category::Cyclist => "cyclist",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vehicle" => Ok(Category::Vehicle),
            "pedestrian" => Ok(Category::Pedestrian),
            "cyclist" => Ok(Category::Cyclist),
            other => Err(Error::InvalidConfig(format!("unknown category `{other}`"))),
        }
    }
}

/// One value per [`Category`]. Every category is always present, which is
/// what the per-class threshold and source tables need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerCategory<T> {
    pub vehicle: T,
    pub pedestrian: T,
    pub cyclist: T,
}

impl<T> PerCategory<T> {
    pub fn new(vehicle: T, pedestrian: T, cyclist: T) -> Self {
        PerCategory {
            vehicle,
            pedestrian,
            cyclist,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Category) -> T) -> Self {
        PerCategory {
            vehicle: f(Category::Vehicle),
            pedestrian: f(Category::Pedestrian),
            cyclist: f(Category::Cyclist),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, &T)> {
        Category::ALL.into_iter().map(move |c| (c, &self[c]))
    }

    pub fn map<U>(&self, mut f: impl FnMut(Category, &T) -> U) -> PerCategory<U> {
        PerCategory::from_fn(|c| f(c, &self[c]))
    }
}

impl<T> Index<Category> for PerCategory<T> {
    type Output = T;

    fn index(&self, c: Category) -> &T {
        match c.index() {
            0 => &self.vehicle,
            1 => &self.pedestrian,
            _ => &self.cyclist,
        }
    }
}

impl<T> IndexMut<Category> for PerCategory<T> {
    fn index_mut(&mut self, c: Category) -> &mut T {
        match c.index() {
            0 => &mut self.vehicle,
            1 => &mut self.pedestrian,
            _ => &mut self.cyclist,
        }
    }
}

/// Identifies one camera image: a frame id plus the camera that shot it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameKey {
    pub frame_id: String,
    pub camera_id: String,
}

impl FrameKey {
    pub fn new(frame_id: impl Into<String>, camera_id: impl Into<String>) -> Self {
        FrameKey {
            frame_id: frame_id.into(),
            camera_id: camera_id.into(),
        }
    }
}

impl fmt::Display for FrameKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.frame_id, self.camera_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: String,
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
}

impl FrameMeta {
    pub fn new(
        frame_id: impl Into<String>,
        camera_id: impl Into<String>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let frame = FrameMeta {
            frame_id: frame_id.into(),
            camera_id: camera_id.into(),
            width,
            height,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidView(format!(
                "frame {} has empty dimensions {}x{}",
                self.key(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn key(&self) -> FrameKey {
        FrameKey::new(self.frame_id.clone(), self.camera_id.clone())
    }

    pub fn bounds(&self) -> BBox {
        BBox {
            x1: 0.0,
            y1: 0.0,
            x2: f64::from(self.width),
            y2: f64::from(self.height),
        }
    }
}

/// A scored, categorized box attached to one camera image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_id: String,
    pub camera_id: String,
    pub category: Category,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl Detection {
    pub fn new(frame: &FrameMeta, category: Category, score: f64, bbox: BBox) -> Self {
        Detection {
            frame_id: frame.frame_id.clone(),
            camera_id: frame.camera_id.clone(),
            category,
            score,
            bbox,
        }
    }

    pub fn key(&self) -> FrameKey {
        FrameKey::new(self.frame_id.clone(), self.camera_id.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::ScoreOutOfRange(self.score));
        }
        Ok(())
    }
}

/// Fractional crop rectangle `(x_lo, y_lo, x_hi, y_hi)` relative to frame
/// width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropFractions {
    pub x_lo: f64,
    pub y_lo: f64,
    pub x_hi: f64,
    pub y_hi: f64,
}

impl CropFractions {
    pub const FULL: CropFractions = CropFractions {
        x_lo: 0.0,
        y_lo: 0.0,
        x_hi: 1.0,
        y_hi: 1.0,
    };

    /// The horizontal centre band where small objects concentrate.
    pub const CENTER_BAND: CropFractions = CropFractions {
        x_lo: 0.0,
        y_lo: 0.3,
        x_hi: 1.0,
        y_hi: 0.8,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo < hi;
        if !ok(self.x_lo, self.x_hi) || !ok(self.y_lo, self.y_hi) {
            return Err(Error::InvalidView(format!(
                "crop fractions ({}, {}, {}, {}) must satisfy 0 <= lo < hi <= 1",
                self.x_lo, self.y_lo, self.x_hi, self.y_hi
            )));
        }
        Ok(())
    }
}

impl Default for CropFractions {
    fn default() -> Self {
        CropFractions::CENTER_BAND
    }
}

/// Maps original-frame coordinates into a detector-input view:
/// `v = (p - crop.origin) * scale`. The view is `out_width x out_height`;
/// anything beyond `scale * crop` is padding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewTransform {
    pub crop: BBox,
    pub scale: f64,
    pub out_width: u32,
    pub out_height: u32,
}

impl ViewTransform {
    pub fn identity(frame: &FrameMeta) -> Self {
        ViewTransform {
            crop: frame.bounds(),
            scale: 1.0,
            out_width: frame.width,
            out_height: frame.height,
        }
    }

    pub fn is_identity_for(&self, frame: &FrameMeta) -> bool {
        self.scale == 1.0 && self.crop == frame.bounds()
    }

    /// Region of the view that carries image content, i.e. the scaled crop
    /// without stride padding.
    pub fn content_bounds(&self) -> BBox {
        BBox {
            x1: 0.0,
            y1: 0.0,
            x2: self.crop.width() * self.scale,
            y2: self.crop.height() * self.scale,
        }
    }

    pub fn out_bounds(&self) -> BBox {
        BBox {
            x1: 0.0,
            y1: 0.0,
            x2: f64::from(self.out_width),
            y2: f64::from(self.out_height),
        }
    }
}

fn floor_snapped(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v.floor()
    }
}

fn ceil_snapped(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v.ceil()
    }
}

fn round_up_to_stride(v: f64, stride: u32) -> u32 {
    let px = ceil_snapped(v) as u64;
    let stride = u64::from(stride);
    (px.div_ceil(stride) * stride) as u32
}

/// Builds the crop-and-enlarge view for the second inference pass.
///
/// Crop bounds are rounded outward to whole pixels and clamped to the frame.
/// Output dimensions are `scale * crop` rounded up to a multiple of `stride`.
pub fn make_enhancement_view(
    frame: &FrameMeta,
    fractions: CropFractions,
    scale: f64,
    stride: u32,
) -> Result<ViewTransform> {
    frame.validate()?;
    fractions.validate()?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidView(format!("scale {scale} must be positive")));
    }
    if stride == 0 {
        return Err(Error::InvalidView("stride must be at least 1".into()));
    }
    let w = f64::from(frame.width);
    let h = f64::from(frame.height);
    let crop = BBox {
        x1: floor_snapped(fractions.x_lo * w).max(0.0),
        y1: floor_snapped(fractions.y_lo * h).max(0.0),
        x2: ceil_snapped(fractions.x_hi * w).min(w),
        y2: ceil_snapped(fractions.y_hi * h).min(h),
    };
    if crop.width() <= 0.0 || crop.height() <= 0.0 {
        return Err(Error::InvalidView(format!(
            "crop fractions select an empty region of {}",
            frame.key()
        )));
    }
    Ok(ViewTransform {
        crop,
        scale,
        out_width: round_up_to_stride(crop.width() * scale, stride),
        out_height: round_up_to_stride(crop.height() * scale, stride),
    })
}

/// Original-frame box to view coordinates. No clipping.
pub fn apply_transform(b: &BBox, view: &ViewTransform) -> BBox {
    let s = view.scale;
    BBox {
        x1: (b.x1 - view.crop.x1) * s,
        y1: (b.y1 - view.crop.y1) * s,
        x2: (b.x2 - view.crop.x1) * s,
        y2: (b.y2 - view.crop.y1) * s,
    }
}

/// View box back to original-frame coordinates; inverse of [`apply_transform`].
pub fn invert_transform(b: &BBox, view: &ViewTransform) -> BBox {
    let s = view.scale;
    BBox {
        x1: b.x1 / s + view.crop.x1,
        y1: b.y1 / s + view.crop.y1,
        x2: b.x2 / s + view.crop.x1,
        y2: b.y2 / s + view.crop.y1,
    }
}

/// Clamps a box to `[0, W] x [0, H]`. A box entirely outside collapses to a
/// zero-area box on the border.
pub fn clip_to_frame(b: &BBox, frame: &FrameMeta) -> BBox {
    clip_to(b, &frame.bounds())
}

pub(crate) fn clip_to(b: &BBox, bounds: &BBox) -> BBox {
    BBox {
        x1: b.x1.clamp(bounds.x1, bounds.x2),
        y1: b.y1.clamp(bounds.y1, bounds.y2),
        x2: b.x2.clamp(bounds.x1, bounds.x2),
        y2: b.y2.clamp(bounds.y1, bounds.y2),
    }
}
