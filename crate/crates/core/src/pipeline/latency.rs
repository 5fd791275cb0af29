//! Per-stage wall-clock accounting against a per-frame budget.

use std::fmt;

use serde::Serialize;

use crate::geometry::FrameKey;

/// Default per-frame budget in milliseconds.
pub const DEFAULT_BUDGET_MS: f64 = 70.0;

/// Wall-clock timings for one frame, in milliseconds. Stage times are summed
/// over every backend the frame ran through.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FrameLatency {
    pub frame_id: String,
    pub camera_id: String,
    pub plain_ms: f64,
    pub enhanced_ms: f64,
    pub merge_ms: f64,
    pub ensemble_ms: f64,
    pub total_ms: f64,
}

impl FrameLatency {
    pub fn key(&self) -> FrameKey {
        FrameKey::new(self.frame_id.clone(), self.camera_id.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMeans {
    pub plain_ms: f64,
    pub enhanced_ms: f64,
    pub merge_ms: f64,
    pub ensemble_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub frames: usize,
    pub budget_ms: f64,
    pub mean: StageMeans,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Frames whose total exceeded the budget.
    pub violations: usize,
    pub rows: Vec<FrameLatency>,
}

/// Nearest-rank percentile of an ascending slice; 0 for an empty slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyReport {
    pub fn from_rows(rows: Vec<FrameLatency>, budget_ms: f64) -> Self {
        let n = rows.len();
        let mean_of = |f: fn(&FrameLatency) -> f64| {
            if n == 0 {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let mean = StageMeans {
            plain_ms: mean_of(|r| r.plain_ms),
            enhanced_ms: mean_of(|r| r.enhanced_ms),
            merge_ms: mean_of(|r| r.merge_ms),
            ensemble_ms: mean_of(|r| r.ensemble_ms),
            total_ms: mean_of(|r| r.total_ms),
        };
        let mut totals: Vec<f64> = rows.iter().map(|r| r.total_ms).collect();
        totals.sort_by(f64::total_cmp);
        LatencyReport {
            frames: n,
            budget_ms,
            mean,
            p50_ms: percentile(&totals, 50.0),
            p90_ms: percentile(&totals, 90.0),
            p99_ms: percentile(&totals, 99.0),
            max_ms: totals.last().copied().unwrap_or(0.0),
            violations: rows.iter().filter(|r| r.total_ms > budget_ms).count(),
            rows,
        }
    }

    /// The bench gate: mean per-frame latency within budget.
    pub fn within_budget(&self) -> bool {
        self.mean.total_ms <= self.budget_ms
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("frame_id,camera_id,plain_ms,enhanced_ms,merge_ms,ensemble_ms,total_ms,over_budget\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{}\n",
                r.frame_id,
                r.camera_id,
                r.plain_ms,
                r.enhanced_ms,
                r.merge_ms,
                r.ensemble_ms,
                r.total_ms,
                r.total_ms > self.budget_ms
            ));
        }
        out
    }
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames            {}", self.frames)?;
        writeln!(f, "budget            {:.1} ms/frame", self.budget_ms)?;
        writeln!(f, "mean plain pass   {:.3} ms", self.mean.plain_ms)?;
        writeln!(f, "mean enhanced     {:.3} ms", self.mean.enhanced_ms)?;
        writeln!(f, "mean merge/nms    {:.3} ms", self.mean.merge_ms)?;
        writeln!(f, "mean ensemble     {:.3} ms", self.mean.ensemble_ms)?;
        writeln!(f, "mean total        {:.3} ms", self.mean.total_ms)?;
        writeln!(
            f,
            "p50/p90/p99/max   {:.3} / {:.3} / {:.3} / {:.3} ms",
            self.p50_ms, self.p90_ms, self.p99_ms, self.max_ms
        )?;
        writeln!(f, "violations        {} of {}", self.violations, self.frames)?;
        write!(
            f,
            "status            {}",
            if self.within_budget() { "PASS" } else { "OVER BUDGET" }
        )
    }
}
