//! Consensus cleaning of annotations.
//!
//! Several independently trained models are run over the training images. A
//! ground truth box survives when enough of them find it; boxes that most
//! models miss are typically occluded or otherwise unrecognizable in a single
//! image and are set aside for review.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::GroundTruthBox;
use crate::geometry::{iou, Detection, FrameKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    /// Models that must agree for a box to be kept.
    pub min_models: usize,
    pub iou_min: f64,
    pub score_min: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            min_models: 2,
            iou_min: 0.5,
            score_min: 0.1,
        }
    }
}

impl CleanConfig {
    pub fn validate(&self, models: usize) -> Result<()> {
        if self.min_models == 0 {
            return Err(Error::InvalidConfig("clean.min_models must be >= 1".into()));
        }
        if self.min_models > models {
            return Err(Error::InvalidConfig(format!(
                "clean.min_models = {} but only {} detection sets were supplied",
                self.min_models, models
            )));
        }
        if !(self.iou_min > 0.0 && self.iou_min <= 1.0) {
            return Err(Error::InvalidThreshold(self.iou_min));
        }
        if !(0.0..=1.0).contains(&self.score_min) {
            return Err(Error::InvalidConfig(format!(
                "clean.score_min {} is outside [0, 1]",
                self.score_min
            )));
        }
        Ok(())
    }
}

/// What one model had to say about one ground truth box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ModelEvidence {
    pub matched: bool,
    /// Best IoU of any same-category detection above `score_min`, matched or
    /// not.
    pub best_iou: f64,
    /// Score of the detection the box was matched to, or of the best-IoU
    /// candidate when unmatched.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GtEvidence {
    pub frame_id: String,
    pub camera_id: String,
    pub gt_id: String,
    pub kept: bool,
    pub per_model: Vec<ModelEvidence>,
}

impl GtEvidence {
    pub fn votes(&self) -> usize {
        self.per_model.iter().filter(|e| e.matched).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutcome {
    pub kept: Vec<GroundTruthBox>,
    pub removed: Vec<GroundTruthBox>,
    /// One entry per input box, in input order.
    pub report: Vec<GtEvidence>,
}

impl CleanOutcome {
    /// CSV with one row per ground truth box and a
    /// `model{i}_matched,model{i}_iou,model{i}_score` triple per model.
    pub fn report_csv(&self) -> String {
        let models = self.report.first().map_or(0, |r| r.per_model.len());
        let mut out = String::from("frame_id,camera_id,gt_id,kept,votes");
        for m in 0..models {
            let _ = write!(out, ",model{m}_matched,model{m}_iou,model{m}_score");
        }
        out.push('\n');
        for r in &self.report {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.frame_id,
                r.camera_id,
                r.gt_id,
                r.kept,
                r.votes()
            );
            for e in &r.per_model {
                let _ = write!(out, ",{},{:.4},{:.4}", e.matched, e.best_iou, e.score);
            }
            out.push('\n');
        }
        out
    }
}

/// Greedy one-to-one matching of a model's detections (score order) against
/// one frame's ground truth. Returns per-GT evidence.
fn match_model(gts: &[&GroundTruthBox], dets: &[&Detection], cfg: &CleanConfig) -> Vec<ModelEvidence> {
    let mut evidence = vec![ModelEvidence::default(); gts.len()];
    let mut candidates: Vec<&Detection> = dets
        .iter()
        .copied()
        .filter(|d| d.score >= cfg.score_min)
        .collect();
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));

    for d in &candidates {
        for (j, g) in gts.iter().enumerate() {
            if g.category == d.category {
                let o = iou(&d.bbox, &g.bbox);
                let e = &mut evidence[j];
                if o > e.best_iou {
                    e.best_iou = o;
                    e.score = d.score;
                }
            }
        }
    }

    let mut taken = vec![false; gts.len()];
    for d in candidates {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.category != d.category {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            if o >= cfg.iou_min && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, o)) = best {
            taken[j] = true;
            evidence[j] = ModelEvidence {
                matched: true,
                best_iou: evidence[j].best_iou.max(o),
                score: d.score,
            };
        }
    }
    evidence
}

/// Keeps a ground truth box iff at least `cfg.min_models` of the detection
/// sets match it with IoU >= `iou_min` using detections scoring >=
/// `score_min`. Both output lists preserve input order.
pub fn consensus_clean(
    gts: &[GroundTruthBox],
    model_dets: &[Vec<Detection>],
    cfg: &CleanConfig,
) -> Result<CleanOutcome> {
    if model_dets.is_empty() {
        return Err(Error::InvalidConfig("at least one detection set is required".into()));
    }
    cfg.validate(model_dets.len())?;

    let mut gt_by_frame: BTreeMap<FrameKey, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by_frame.entry(g.key()).or_default().push(i);
    }
    let dets_by_frame: Vec<BTreeMap<FrameKey, Vec<&Detection>>> = model_dets
        .iter()
        .map(|set| {
            let mut m: BTreeMap<FrameKey, Vec<&Detection>> = BTreeMap::new();
            for d in set {
                m.entry(d.key()).or_default().push(d);
            }
            m
        })
        .collect();

    let mut per_gt: Vec<Vec<ModelEvidence>> = vec![Vec::with_capacity(model_dets.len()); gts.len()];
    for (key, idx) in &gt_by_frame {
        let frame_gts: Vec<&GroundTruthBox> = idx.iter().map(|&i| &gts[i]).collect();
        for model in &dets_by_frame {
            let dets = model.get(key).map(Vec::as_slice).unwrap_or(&[]);
            for (&i, e) in idx.iter().zip(match_model(&frame_gts, dets, cfg)) {
                per_gt[i].push(e);
            }
        }
    }

    let mut outcome = CleanOutcome {
        kept: Vec::new(),
        removed: Vec::new(),
        report: Vec::with_capacity(gts.len()),
    };
    for (g, per_model) in gts.iter().zip(per_gt) {
        let votes = per_model.iter().filter(|e| e.matched).count();
        let kept = votes >= cfg.min_models;
        if kept {
            outcome.kept.push(g.clone());
        } else {
            outcome.removed.push(g.clone());
        }
        outcome.report.push(GtEvidence {
            frame_id: g.frame_id.clone(),
            camera_id: g.camera_id.clone(),
            gt_id: g.id.clone(),
            kept,
            per_model,
        });
    }
    Ok(outcome)
}
