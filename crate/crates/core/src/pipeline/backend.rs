//! Detector backends: anything that maps `(frame, view)` to detections in
//! view coordinates.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::geometry::{Detection, FrameKey, FrameMeta, ViewTransform};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// A detector as seen by the pipeline.
///
/// Implementations must be deterministic for a given `(frame, view)` and
/// return boxes inside `[0, out_width] x [0, out_height]` of the view with
/// scores in `[0, 1]`. They are shared across worker threads.
pub trait DetectorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn detect(
        &self,
        frame: &FrameMeta,
        view: &ViewTransform,
    ) -> Result<Vec<Detection>, BackendError>;
}

/// Plays back detections loaded from files.
///
/// `plain` records answer identity-view requests and are in frame
/// coordinates. `enhanced` records answer any other view and are stored in
/// that view's coordinates, exactly as a detector run on the enlarged crop
/// would have emitted them.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    name: String,
    plain: HashMap<FrameKey, Vec<Detection>>,
    enhanced: HashMap<FrameKey, Vec<Detection>>,
}

impl ReplayBackend {
    pub fn new(name: impl Into<String>) -> Self {
        ReplayBackend {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn with_plain(mut self, dets: impl IntoIterator<Item = Detection>) -> Self {
        for d in dets {
            self.plain.entry(d.key()).or_default().push(d);
        }
        self
    }

    pub fn with_enhanced(mut self, dets: impl IntoIterator<Item = Detection>) -> Self {
        for d in dets {
            self.enhanced.entry(d.key()).or_default().push(d);
        }
        self
    }
}

impl DetectorBackend for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(
        &self,
        frame: &FrameMeta,
        view: &ViewTransform,
    ) -> Result<Vec<Detection>, BackendError> {
        let table = if view.is_identity_for(frame) {
            &self.plain
        } else {
            &self.enhanced
        };
        Ok(table.get(&frame.key()).cloned().unwrap_or_default())
    }
}

/// Sleeps a fixed time per call, then defers to an inner backend (or returns
/// nothing). Used to exercise the latency harness.
pub struct StubBackend {
    name: String,
    delay: Duration,
    inner: Option<Arc<dyn DetectorBackend>>,
}

impl StubBackend {
    pub fn new(name: impl Into<String>, delay: Duration) -> Self {
        StubBackend {
            name: name.into(),
            delay,
            inner: None,
        }
    }

    pub fn wrapping(mut self, inner: Arc<dyn DetectorBackend>) -> Self {
        self.inner = Some(inner);
        self
    }
}

impl DetectorBackend for StubBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(
        &self,
        frame: &FrameMeta,
        view: &ViewTransform,
    ) -> Result<Vec<Detection>, BackendError> {
        std::thread::sleep(self.delay);
        match &self.inner {
            Some(inner) => inner.detect(frame, view),
            None => Ok(Vec::new()),
        }
    }
}

/// Always fails; handy for checking error propagation.
#[derive(Debug, Clone)]
pub struct FailingBackend(pub String);

impl DetectorBackend for FailingBackend {
    fn name(&self) -> &str {
        &self.0
    }

    fn detect(&self, _: &FrameMeta, _: &ViewTransform) -> Result<Vec<Detection>, BackendError> {
        Err(BackendError("backend unavailable".into()))
    }
}
