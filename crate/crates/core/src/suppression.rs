//! Greedy non-maximum suppression, plain and class-aware.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection, PerCategory};

/// Per-category IoU thresholds for class-aware NMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub per_category_iou: PerCategory<f64>,
    /// Detections scoring below this are dropped before suppression.
    pub min_score: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            per_category_iou: PerCategory::new(0.75, 0.55, 0.55),
            min_score: 0.0,
        }
    }
}

impl NmsConfig {
    /// Same threshold for every category.
    pub fn uniform(iou_thresh: f64) -> Self {
        NmsConfig {
            per_category_iou: PerCategory::new(iou_thresh, iou_thresh, iou_thresh),
            min_score: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (_, &t) in self.per_category_iou.iter() {
            check_threshold(t)?;
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(Error::InvalidConfig(format!(
                "nms.min_score {} is outside [0, 1]",
                self.min_score
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(t))
    }
}

fn check_scores(dets: &[Detection]) -> Result<()> {
    dets.iter().try_for_each(|d| {
        if (0.0..=1.0).contains(&d.score) {
            Ok(())
        } else {
            Err(Error::ScoreOutOfRange(d.score))
        }
    })
}

/// Indices sorted by score descending; equal scores keep input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Core greedy loop over indices. `threshold_for(a, b)` returns the IoU at
/// which `a` suppresses `b`, or `None` when the pair never interacts.
fn greedy(
    dets: &[Detection],
    threshold_for: impl Fn(&Detection, &Detection) -> Option<f64>,
) -> Vec<usize> {
    let order = score_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        let kept = &dets[i];
        for &j in &order[pos + 1..] {
            if suppressed[j] {
                continue;
            }
            if let Some(t) = threshold_for(kept, &dets[j]) {
                if iou(&kept.bbox, &dets[j].bbox) >= t {
                    suppressed[j] = true;
                }
            }
        }
    }
    keep
}

fn gather(dets: &[Detection], idx: &[usize]) -> Vec<Detection> {
    idx.iter().map(|&i| dets[i].clone()).collect()
}

/// Category-agnostic greedy NMS: every box competes with every other box.
///
/// Output is sorted by score descending, ties in input order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>> {
    check_threshold(iou_thresh)?;
    check_scores(dets)?;
    Ok(gather(dets, &greedy(dets, |_, _| Some(iou_thresh))))
}

/// Greedy NMS run independently per category with that category's threshold.
///
/// Boxes of different categories never suppress each other. The merged output
/// is sorted by score descending, ties in input order.
pub fn class_aware_nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    Ok(gather(dets, &class_aware_nms_indices(dets, cfg)?))
}

/// Like [`class_aware_nms`] but returns the surviving input indices, in
/// output order.
pub fn class_aware_nms_indices(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    check_scores(dets)?;
    let thresholds = cfg.per_category_iou;
    let min_score = cfg.min_score;
    let mut keep = greedy(dets, |a, b| {
        (a.category == b.category).then(|| thresholds[a.category])
    });
    if min_score > 0.0 {
        // Boxes below the floor neither survive nor suppress anything; they
        // sit at the tail of the score order so dropping them after the fact
        // is equivalent to pre-filtering.
        keep.retain(|&i| dets[i].score >= min_score);
    }
    Ok(keep)
}

/// Splits detections by category, preserving order.
pub fn partition_by_category(dets: &[Detection]) -> PerCategory<Vec<Detection>> {
    let mut out: PerCategory<Vec<Detection>> = PerCategory::default();
    for d in dets {
        out[d.category].push(d.clone());
    }
    out
}
