//! Concatenation of every i-th frame into one world-frame cloud.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Sequence;
use crate::types::{transform_to_world, CoordinateFrame, LabeledPointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConcatConfig {
    pub step: usize,
}

impl Default for ConcatConfig {
    fn default() -> Self {
        Self { step: 10 }
    }
}

impl ConcatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::InvalidConfig(
                "concatenation step must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Positions `0, step, 2·step, …` below `frame_count`.
pub fn select_frame_indices(frame_count: usize, step: usize) -> Vec<usize> {
    assert!(step >= 1, "step must be >= 1");
    (0..frame_count).step_by(step).collect()
}

/// Transforms the selected frames into the world frame and appends them in
/// frame order. No deduplication.
pub fn concatenate(sequence: &Sequence, config: &ConcatConfig) -> Result<LabeledPointCloud> {
    config.validate()?;
    if sequence.frames.is_empty() {
        return Err(Error::Format("sequence has no frames".into()));
    }
    let selected = select_frame_indices(sequence.frames.len(), config.step);
    let parts: Vec<LabeledPointCloud> = selected
        .par_iter()
        .map(|&k| {
            let frame = &sequence.frames[k];
            transform_to_world(&frame.cloud, &frame.pose)
        })
        .collect::<Result<_>>()?;

    let mut out = LabeledPointCloud::empty(sequence.sequence_id.clone(), CoordinateFrame::World);
    for part in &parts {
        out.extend(part);
    }
    Ok(out)
}

/// Frame indices (as recorded in the poses) of the frames `concatenate`
/// would use.
pub fn selected_frame_numbers(sequence: &Sequence, config: &ConcatConfig) -> Vec<u32> {
    select_frame_indices(sequence.frames.len(), config.step.max(1))
        .into_iter()
        .map(|k| sequence.frames[k].frame_index())
        .collect()
}
