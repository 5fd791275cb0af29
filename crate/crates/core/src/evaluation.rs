//! Per-category average precision with category-specific IoU thresholds and
//! two difficulty levels.
//!
//! Matching is greedy in score order: each detection takes the unmatched
//! same-category ground truth box with the highest IoU, provided that IoU
//! reaches the category threshold. At [`Level::L2`] every ground truth box is
//! a positive. At [`Level::L1`] difficulty-2 boxes are "don't care": a
//! detection whose best match is one of them is [`MatchLabel::Ignored`] and
//! the box itself is not counted as a positive.
//!
//! AP is the area under the precision envelope, integrated over recall with
//! all-points interpolation. Curves are pooled over all frames before
//! integrating.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Category, Detection, FrameKey, PerCategory};
use crate::suppression::check_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Difficulty {
    Level1 = 1,
    Level2 = 2,
}

impl TryFrom<u8> for Difficulty {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Difficulty::Level1),
            2 => Ok(Difficulty::Level2),
            other => Err(Error::InvalidConfig(format!("difficulty must be 1 or 2, got {other}"))),
        }
    }
}

impl From<Difficulty> for u8 {
    fn from(d: Difficulty) -> u8 {
        d as u8
    }
}

/// An annotated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub frame_id: String,
    pub camera_id: String,
    pub id: String,
    pub category: Category,
    pub difficulty: Difficulty,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl GroundTruthBox {
    pub fn key(&self) -> FrameKey {
        FrameKey::new(self.frame_id.clone(), self.camera_id.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    L1,
    L2,
}

impl Level {
    fn counts(self, d: Difficulty) -> bool {
        match self {
            Level::L1 => d == Difficulty::Level1,
            Level::L2 => true,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub per_category_iou: PerCategory<f64>,
    pub level: Level,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            per_category_iou: PerCategory::new(0.7, 0.5, 0.5),
            level: Level::L2,
        }
    }
}

impl EvalConfig {
    pub fn at_level(level: Level) -> Self {
        EvalConfig {
            level,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.per_category_iou
            .iter()
            .try_for_each(|(_, &t)| check_threshold(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Matching outcome for one camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// One label per input detection, in input order.
    pub labels: Vec<MatchLabel>,
    /// Index of the ground truth box each detection consumed, if any.
    pub matched_gt: Vec<Option<usize>>,
    /// Ground truth boxes that count as positives at the configured level.
    pub positives: PerCategory<usize>,
}

impl FrameMatch {
    /// Indices of the ground truth boxes counted as positives.
    pub fn positive_set(gts: &[GroundTruthBox], level: Level) -> Vec<usize> {
        (0..gts.len())
            .filter(|&i| level.counts(gts[i].difficulty))
            .collect()
    }
}

fn check_single_frame(dets: &[Detection], gts: &[GroundTruthBox]) -> Result<()> {
    let mut keys = dets.iter().map(Detection::key).chain(gts.iter().map(GroundTruthBox::key));
    if let Some(first) = keys.next() {
        for k in keys {
            if k != first {
                return Err(Error::MixedFrames {
                    expected: first.to_string(),
                    found: k.to_string(),
                });
            }
        }
    }
    let mut seen = HashSet::new();
    for g in gts {
        if !seen.insert(g.id.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate ground truth id `{}` in {}",
                g.id,
                g.key()
            )));
        }
    }
    Ok(())
}

/// Greedy matching of one frame's detections against its ground truth.
pub fn match_frame(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    cfg: &EvalConfig,
) -> Result<FrameMatch> {
    cfg.validate()?;
    check_single_frame(dets, gts)?;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut taken = vec![false; gts.len()];
    let mut labels = vec![MatchLabel::FalsePositive; dets.len()];
    let mut matched_gt = vec![None; dets.len()];
    for i in order {
        let d = &dets[i];
        let thresh = cfg.per_category_iou[d.category];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.category != d.category {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            if o >= thresh && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            matched_gt[i] = Some(j);
            labels[i] = if cfg.level.counts(gts[j].difficulty) {
                MatchLabel::TruePositive
            } else {
                MatchLabel::Ignored
            };
        }
    }
    let mut positives = PerCategory::default();
    for g in gts.iter().filter(|g| cfg.level.counts(g.difficulty)) {
        positives[g.category] += 1;
    }
    Ok(FrameMatch {
        labels,
        matched_gt,
        positives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall after each distinct score threshold, highest first.
/// Ignored detections are left out entirely.
pub fn pr_curve(scored: &[(f64, MatchLabel)], total_positives: usize) -> Vec<PrPoint> {
    let mut counted: Vec<(f64, bool)> = scored
        .iter()
        .filter(|(_, l)| *l != MatchLabel::Ignored)
        .map(|&(s, l)| (s, l == MatchLabel::TruePositive))
        .collect();
    counted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < counted.len() {
        let score = counted[i].0;
        while i < counted.len() && counted[i].0 == score {
            if counted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = if total_positives == 0 {
            0.0
        } else {
            tp as f64 / total_positives as f64
        };
        curve.push(PrPoint {
            recall,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    curve
}

/// All-points interpolated AP: `sum (r_i - r_{i-1}) * max_{j >= i} p_j`.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut envelope = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for (i, p) in curve.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[i] = running;
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, env) in curve.iter().zip(envelope) {
        ap += (p.recall - prev_recall).max(0.0) * env;
        prev_recall = prev_recall.max(p.recall);
    }
    ap.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CategoryStats {
    /// `None` when the category has neither positives nor counted detections.
    pub ap: Option<f64>,
    pub positives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ignored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub level: Level,
    pub per_category: PerCategory<CategoryStats>,
    /// Unweighted mean over categories that have an AP.
    pub mean_ap: Option<f64>,
}

impl ApResult {
    pub fn ap(&self, c: Category) -> Option<f64> {
        self.per_category[c].ap
    }
}

type FrameGroup<'a> = (Vec<&'a Detection>, Vec<&'a GroundTruthBox>);

/// Pools matches over all frames and computes per-category AP and the mean.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruthBox], cfg: &EvalConfig) -> Result<ApResult> {
    cfg.validate()?;
    let mut frames: BTreeMap<FrameKey, FrameGroup<'_>> = BTreeMap::new();
    for d in dets {
        frames.entry(d.key()).or_default().0.push(d);
    }
    for g in gts {
        frames.entry(g.key()).or_default().1.push(g);
    }
    let groups: Vec<&FrameGroup<'_>> = frames.values().collect();
    let matched: Vec<(Vec<Detection>, FrameMatch)> = groups
        .par_iter()
        .map(|(fd, fg)| {
            let fd: Vec<Detection> = fd.iter().map(|&d| d.clone()).collect();
            let fg: Vec<GroundTruthBox> = fg.iter().map(|&g| g.clone()).collect();
            let m = match_frame(&fd, &fg, cfg)?;
            Ok((fd, m))
        })
        .collect::<Result<_>>()?;

    let mut scored: PerCategory<Vec<(f64, MatchLabel)>> = PerCategory::default();
    let mut stats: PerCategory<CategoryStats> = PerCategory::default();
    for (fd, m) in &matched {
        for c in Category::ALL {
            stats[c].positives += m.positives[c];
        }
        for (d, &label) in fd.iter().zip(&m.labels) {
            scored[d.category].push((d.score, label));
            let s = &mut stats[d.category];
            match label {
                MatchLabel::TruePositive => s.true_positives += 1,
                MatchLabel::FalsePositive => s.false_positives += 1,
                MatchLabel::Ignored => s.ignored += 1,
            }
        }
    }
    for c in Category::ALL {
        let s = &mut stats[c];
        s.ap = if s.positives > 0 {
            Some(average_precision(&pr_curve(&scored[c], s.positives)))
        } else if s.true_positives + s.false_positives > 0 {
            Some(0.0)
        } else {
            None
        };
    }
    let aps: Vec<f64> = stats.iter().filter_map(|(_, s)| s.ap).collect();
    let mean_ap = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    Ok(ApResult {
        level: cfg.level,
        per_category: stats,
        mean_ap,
    })
}

/// Recall restricted to positives with `area < max_area`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeRecall {
    pub max_area: f64,
    pub positives: usize,
    pub matched: usize,
}

impl SizeRecall {
    /// `None` when no positive falls under the size limit.
    pub fn recall(&self) -> Option<f64> {
        (self.positives > 0).then(|| self.matched as f64 / self.positives as f64)
    }
}

/// Fraction of small positives reached by a true positive under the same
/// matching rule as [`evaluate`].
pub fn size_recall(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    cfg: &EvalConfig,
    max_area: f64,
) -> Result<SizeRecall> {
    cfg.validate()?;
    let mut frames: BTreeMap<FrameKey, (Vec<Detection>, Vec<GroundTruthBox>)> = BTreeMap::new();
    for d in dets {
        frames.entry(d.key()).or_default().0.push(d.clone());
    }
    for g in gts {
        frames.entry(g.key()).or_default().1.push(g.clone());
    }
    let mut out = SizeRecall {
        max_area,
        positives: 0,
        matched: 0,
    };
    for (fd, fg) in frames.values() {
        let m = match_frame(fd, fg, cfg)?;
        let small = |j: usize| cfg.level.counts(fg[j].difficulty) && fg[j].bbox.area() < max_area;
        out.positives += (0..fg.len()).filter(|&j| small(j)).count();
        out.matched += m.matched_gt.iter().flatten().filter(|&&j| small(j)).count();
    }
    Ok(out)
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// CSV rows `level,category,ap,positives,tp,fp,ignored` for several levels.
pub fn results_to_csv(results: &[ApResult]) -> String {
    let mut out = String::from("level,category,ap,positives,tp,fp,ignored\n");
    for r in results {
        for (c, s) in r.per_category.iter() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.level,
                c,
                s.ap.map_or(String::new(), |v| format!("{v:.6}")),
                s.positives,
                s.true_positives,
                s.false_positives,
                s.ignored
            ));
        }
        out.push_str(&format!(
            "{},mean,{},,,,\n",
            r.level,
            r.mean_ap.map_or(String::new(), |v| format!("{v:.6}"))
        ));
    }
    out
}

impl fmt::Display for ApResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<6} {:<11} {:>8} {:>9} {:>6} {:>6} {:>7}",
            "level", "category", "AP", "positives", "TP", "FP", "ignored"
        )?;
        for (c, s) in self.per_category.iter() {
            writeln!(
                f,
                "{:<6} {:<11} {:>8} {:>9} {:>6} {:>6} {:>7}",
                self.level,
                c,
                fmt_ap(s.ap),
                s.positives,
                s.true_positives,
                s.false_positives,
                s.ignored
            )?;
        }
        write!(f, "{:<6} {:<11} {:>8}", self.level, "mean", fmt_ap(self.mean_ap))
    }
}
