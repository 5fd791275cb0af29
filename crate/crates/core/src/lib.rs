//! Non-neural stages of a real-time 2D object detection pipeline.
//!
//! The crate covers everything around the detector network itself: the
//! crop-and-enlarge view used for small objects, class-aware non-maximum
//! suppression, class-wise multi-model ensembling, anchor clustering,
//! consensus cleaning of annotations, and average-precision evaluation at two
//! difficulty levels. Detectors plug in through
//! [`pipeline::DetectorBackend`]; a file-replay and a seeded synthetic
//! backend ship with the crate.

pub mod anchors;
pub mod cleaning;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod simulate;
pub mod suppression;

pub use error::{Error, Result};
pub use evaluation::{Difficulty, GroundTruthBox, Level};
pub use geometry::{BBox, Category, Detection, FrameKey, FrameMeta, PerCategory, ViewTransform};

/// Chapters of the guide in `book/`, compiled here so their examples run as
/// doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/suppression.md")]
    mod suppression {}
    #[doc = include_str!("../../../book/src/scale-enhancement.md")]
    mod scale_enhancement {}
    #[doc = include_str!("../../../book/src/ensemble.md")]
    mod ensemble {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/anchors.md")]
    mod anchors {}
    #[doc = include_str!("../../../book/src/cleaning.md")]
    mod cleaning {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
