//! Vegetation clearance analysis over labeled LiDAR sequences.
//!
//! The pipeline concatenates sparse frames into a world-frame cloud, extracts
//! the drivable-area boundary from road points, and reports vegetation that
//! hangs over the road below a clearance height. Hits are projected into the
//! sequence's camera images.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod contour;
pub mod error;
pub mod gauge;
pub mod ingest;
pub mod kdtree;
pub mod pipeline;
pub mod preprocess;
pub mod project;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use pipeline::{
    analyze, run_pipeline, run_sweep, ClearanceReport, PipelineConfig, SweepParameter,
};
pub use types::{CoordinateFrame, FramePose, LabeledPointCloud, Point3, SemanticClass, Vec2};
