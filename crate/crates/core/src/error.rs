use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the clearance pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("calibration error: quaternion norm {norm} is not 1 (tolerance 1e-9)")]
    NonUnitQuaternion { norm: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: row {row}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {count} row(s) with non-finite coordinates, first at row {first_row}")]
    NonFinite {
        path: PathBuf,
        first_row: usize,
        count: usize,
    },

    #[error("unmapped label id {id} at row {row}")]
    UnmappedLabel { id: i64, row: usize },

    #[error("no pose for frame {frame_index}")]
    MissingPose { frame_index: u32 },

    #[error("camera '{camera_id}' has no pose for frame {frame_index}")]
    MissingCameraPose { camera_id: String, frame_index: u32 },

    #[error("length mismatch: {points} points but {classes} classes")]
    LengthMismatch { points: usize, classes: usize },

    #[error("sequence format error: {0}")]
    Format(String),

    #[error("expected a {expected:?}-frame cloud, got {actual:?}")]
    WrongFrame {
        expected: crate::types::CoordinateFrame,
        actual: crate::types::CoordinateFrame,
    },

    #[error("no road points after filtering")]
    NoRoadPoints,

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
