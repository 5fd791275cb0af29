//! Anchor selection by k-means over ground-truth box dimensions, plus the
//! small-object centre heatmap.
//!
//! Clustering runs Lloyd iterations under `1 - IoU` of origin-aligned boxes
//! by default. Centroids are updated to the cluster mean (or medoid), but an
//! update that would raise a cluster's cost is rejected, so the recorded cost
//! never goes up from one iteration to the next.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::GroundTruthBox;
use crate::geometry::{area, FrameKey, FrameMeta};

/// A `(width, height)` pair in pixels.
pub type Dims = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// `1 - IoU` of boxes sharing a corner.
    #[default]
    Iou,
    /// Squared Euclidean distance on `(w, h)`.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidUpdate {
    #[default]
    Mean,
    /// The member minimizing the summed distance to its cluster. O(n²) per
    /// cluster.
    Medoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves further than this (pixels).
    pub tol: f64,
    pub metric: DistanceMetric,
    pub update: CentroidUpdate,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        KmeansConfig {
            k: 12,
            seed: 42,
            max_iters: 300,
            tol: 1e-6,
            metric: DistanceMetric::Iou,
            update: CentroidUpdate::Mean,
        }
    }
}

impl KmeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Clustering("k must be at least 1".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::Clustering(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Anchors sorted by area, smallest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorSet {
    pub anchors: Vec<Dims>,
}

impl AnchorSet {
    pub fn new(mut anchors: Vec<Dims>) -> Self {
        anchors.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
        AnchorSet { anchors }
    }

    /// The twelve default anchors of the YOLOR-P6 detector family, four
    /// output scales by three shapes.
    pub fn yolor_p6() -> Self {
        AnchorSet::new(vec![
            (19.0, 27.0),
            (44.0, 40.0),
            (38.0, 94.0),
            (96.0, 68.0),
            (86.0, 152.0),
            (180.0, 137.0),
            (140.0, 301.0),
            (303.0, 264.0),
            (238.0, 542.0),
            (436.0, 615.0),
            (739.0, 380.0),
            (925.0, 792.0),
        ])
    }

    pub fn k(&self) -> usize {
        self.anchors.len()
    }

    /// `w / h` of the smallest anchor.
    pub fn smallest_aspect_ratio(&self) -> Option<f64> {
        self.anchors.first().map(|&(w, h)| w / h)
    }

    /// One `w,h` line per anchor.
    pub fn to_text(&self) -> String {
        self.anchors
            .iter()
            .map(|(w, h)| format!("{w:.2},{h:.2}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmeansOutcome {
    pub anchors: AnchorSet,
    /// Mean distance of each box to its assigned centroid at the end.
    pub mean_distance: f64,
    /// Mean distance after every assignment step, starting with the seeding.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl fmt::Display for KmeansOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "anchors           {}", self.anchors.k())?;
        writeln!(f, "iterations        {}", self.iterations)?;
        writeln!(f, "converged         {}", self.converged)?;
        writeln!(f, "mean distance     {:.6}", self.mean_distance)?;
        if let Some(ar) = self.anchors.smallest_aspect_ratio() {
            writeln!(f, "smallest w/h      {ar:.3}")?;
        }
        let avg_iou = 1.0 - self.mean_distance;
        write!(f, "mean best IoU     {avg_iou:.4}")
    }
}

fn check_dims(d: Dims) -> Result<()> {
    if d.0 > 0.0 && d.1 > 0.0 && d.0.is_finite() && d.1.is_finite() {
        Ok(())
    } else {
        Err(Error::Clustering(format!(
            "box dimensions must be positive, got {}x{}",
            d.0, d.1
        )))
    }
}

fn iou_distance(a: Dims, b: Dims) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    let union = a.0 * a.1 + b.0 * b.1 - inter;
    (1.0 - inter / union).max(0.0)
}

fn distance(metric: DistanceMetric, a: Dims, b: Dims) -> f64 {
    match metric {
        DistanceMetric::Iou => iou_distance(a, b),
        DistanceMetric::Euclidean => (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2),
    }
}

/// `1 - IoU` of two boxes anchored at the same corner.
pub fn anchor_distance(box_wh: Dims, anchor: Dims) -> Result<f64> {
    check_dims(box_wh)?;
    check_dims(anchor)?;
    Ok(iou_distance(box_wh, anchor))
}

struct Lloyd<'a> {
    points: &'a [Dims],
    metric: DistanceMetric,
    centroids: Vec<Dims>,
    assign: Vec<usize>,
}

impl Lloyd<'_> {
    fn dist(&self, p: usize, c: usize) -> f64 {
        distance(self.metric, self.points[p], self.centroids[c])
    }

    fn nearest(&self, p: usize) -> usize {
        let mut best = 0;
        let mut best_d = self.dist(p, 0);
        for c in 1..self.centroids.len() {
            let d = self.dist(p, c);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        best
    }

    fn reassign(&mut self) {
        self.assign = (0..self.points.len()).map(|p| self.nearest(p)).collect();
    }

    /// Moves each empty centroid onto the point furthest from its own
    /// centroid, then reassigns, until no cluster is empty.
    fn repair_empty(&mut self) {
        for _ in 0..self.centroids.len() {
            let mut sizes = vec![0usize; self.centroids.len()];
            for &a in &self.assign {
                sizes[a] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                return;
            };
            let far = (0..self.points.len())
                .max_by(|&a, &b| {
                    self.dist(a, self.assign[a])
                        .total_cmp(&self.dist(b, self.assign[b]))
                        .then(b.cmp(&a))
                })
                .expect("non-empty input");
            self.centroids[empty] = self.points[far];
            self.reassign();
        }
    }

    fn cost(&self) -> f64 {
        let total: f64 = (0..self.points.len()).map(|p| self.dist(p, self.assign[p])).sum();
        total / self.points.len() as f64
    }

    fn members(&self, c: usize) -> Vec<Dims> {
        self.assign
            .iter()
            .zip(self.points)
            .filter(|(&a, _)| a == c)
            .map(|(_, &p)| p)
            .collect()
    }

    fn cluster_cost(&self, members: &[Dims], centre: Dims) -> f64 {
        members.iter().map(|&p| distance(self.metric, p, centre)).sum()
    }

    /// Returns the largest centroid displacement.
    fn update(&mut self, how: CentroidUpdate) -> f64 {
        let mut moved = 0.0f64;
        for c in 0..self.centroids.len() {
            let members = self.members(c);
            if members.is_empty() {
                continue;
            }
            let candidate = match how {
                CentroidUpdate::Mean => {
                    let n = members.len() as f64;
                    let (sw, sh) = members
                        .iter()
                        .fold((0.0, 0.0), |(sw, sh), &(w, h)| (sw + w, sh + h));
                    (sw / n, sh / n)
                }
                CentroidUpdate::Medoid => *members
                    .iter()
                    .min_by(|&&a, &&b| {
                        self.cluster_cost(&members, a)
                            .total_cmp(&self.cluster_cost(&members, b))
                    })
                    .expect("non-empty cluster"),
            };
            let old = self.centroids[c];
            if self.cluster_cost(&members, candidate) <= self.cluster_cost(&members, old) {
                moved = moved.max(((candidate.0 - old.0).powi(2) + (candidate.1 - old.1).powi(2)).sqrt());
                self.centroids[c] = candidate;
            }
        }
        moved
    }
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn seed_centroids(points: &[Dims], k: usize, metric: DistanceMetric, rng: &mut impl Rng) -> Vec<Dims> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|&p| {
                let d = centroids
                    .iter()
                    .map(|&c| distance(metric, p, c))
                    .fold(f64::INFINITY, f64::min);
                d * d
            })
            .collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // All remaining weight is zero; only possible with duplicates.
            Err(_) => weights.iter().position(|&w| w > 0.0).unwrap_or(0),
        };
        centroids.push(points[next]);
    }
    centroids
}

/// Clusters box dimensions into `cfg.k` anchors.
///
/// The input is sorted before seeding so the result does not depend on input
/// order.
pub fn kmeans_anchors(boxes: &[Dims], cfg: &KmeansConfig) -> Result<KmeansOutcome> {
    if boxes.is_empty() {
        return Err(Error::Clustering("no boxes to cluster".into()));
    }
    cfg.validate()?;
    boxes.iter().try_for_each(|&b| check_dims(b))?;
    let mut points = boxes.to_vec();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut distinct = points.clone();
    distinct.dedup();
    if cfg.k > distinct.len() {
        return Err(Error::Clustering(format!(
            "k = {} exceeds the {} distinct box sizes",
            cfg.k,
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = Lloyd {
        points: &points,
        metric: cfg.metric,
        centroids: seed_centroids(&points, cfg.k, cfg.metric, &mut rng),
        assign: Vec::new(),
    };
    state.reassign();
    state.repair_empty();
    let mut history = vec![state.cost()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let moved = state.update(cfg.update);
        state.reassign();
        state.repair_empty();
        history.push(state.cost());
        if moved < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(KmeansOutcome {
        anchors: AnchorSet::new(state.centroids),
        mean_distance: *history.last().expect("seeded cost"),
        cost_history: history,
        iterations,
        converged,
    })
}

/// How "small" is decided when selecting the subset to cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "limit")]
pub enum SmallRule {
    /// `w * h < limit`.
    Area(f64),
    /// `w < limit` and `h < limit`.
    Side(f64),
}

impl SmallRule {
    pub fn is_small(&self, (w, h): Dims) -> bool {
        match *self {
            SmallRule::Area(max) => w * h < max,
            SmallRule::Side(max) => w < max && h < max,
        }
    }
}

impl Default for SmallRule {
    fn default() -> Self {
        SmallRule::Area(64.0 * 64.0)
    }
}

/// Boxes with `w * h < area_max`.
pub fn small_subset(boxes: &[Dims], area_max: f64) -> Vec<Dims> {
    small_subset_by(boxes, SmallRule::Area(area_max))
}

pub fn small_subset_by(boxes: &[Dims], rule: SmallRule) -> Vec<Dims> {
    boxes.iter().copied().filter(|&b| rule.is_small(b)).collect()
}

/// `(w, h)` of every ground truth box with positive area.
pub fn gt_dims(gts: &[GroundTruthBox]) -> Vec<Dims> {
    gts.iter()
        .map(|g| (g.bbox.width(), g.bbox.height()))
        .filter(|&(w, h)| w > 0.0 && h > 0.0)
        .collect()
}

/// Counts of normalized small-object centres on a `grid_h x grid_w` grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeatmapGrid {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Row-major, `grid_h` rows of `grid_w` cells; row 0 is the image top.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl HeatmapGrid {
    pub fn cell(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.grid_w + col]
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row * self.grid_w..(row + 1) * self.grid_w].iter().sum()
    }

    /// Share of the total falling in rows entirely inside `[y_lo, y_hi]`
    /// (fractions of image height).
    pub fn band_fraction(&self, y_lo: f64, y_hi: f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let h = self.grid_h as f64;
        let inside: u64 = (0..self.grid_h)
            .filter(|&r| r as f64 / h >= y_lo - 1e-12 && (r + 1) as f64 / h <= y_hi + 1e-12)
            .map(|r| self.row_sum(r))
            .sum();
        inside as f64 / self.total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.grid_h {
            let row: Vec<String> = (0..self.grid_w).map(|c| self.cell(c, r).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn bin(v: f64, n: usize) -> usize {
    ((v.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n - 1)
}

/// Bins the normalized centres of ground truth boxes with
/// `area < small_area_max`. Each box is normalized by its own frame size.
pub fn center_heatmap(
    gts: &[GroundTruthBox],
    frames: &BTreeMap<FrameKey, FrameMeta>,
    grid_w: usize,
    grid_h: usize,
    small_area_max: f64,
) -> Result<HeatmapGrid> {
    if grid_w == 0 || grid_h == 0 {
        return Err(Error::InvalidConfig("heatmap grid must be at least 1x1".into()));
    }
    let mut grid = HeatmapGrid {
        grid_w,
        grid_h,
        counts: vec![0; grid_w * grid_h],
        total: 0,
    };
    for g in gts.iter().filter(|g| area(&g.bbox) < small_area_max) {
        let key = g.key();
        let frame = frames.get(&key).ok_or_else(|| Error::MissingFrame {
            frame_id: key.frame_id.clone(),
            camera_id: key.camera_id.clone(),
        })?;
        let (cx, cy) = g.bbox.center();
        let col = bin(cx / f64::from(frame.width), grid_w);
        let row = bin(cy / f64::from(frame.height), grid_h);
        grid.counts[row * grid_w + col] += 1;
        grid.total += 1;
    }
    Ok(grid)
}
