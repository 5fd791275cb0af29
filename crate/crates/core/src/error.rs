use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid view parameters: {0}")]
    InvalidView(String),

    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("IoU threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no backend registered under `{0}`")]
    MissingBackend(String),

    #[error("backend `{backend}` failed on frame {frame_id}/{camera_id}: {message}")]
    Backend {
        backend: String,
        frame_id: String,
        camera_id: String,
        message: String,
    },

    #[error("no frame metadata for {frame_id}/{camera_id}")]
    MissingFrame { frame_id: String, camera_id: String },

    #[error("expected records from a single frame, found {expected} and {found}")]
    MixedFrames { expected: String, found: String },

    #[error("k-means: {0}")]
    Clustering(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
