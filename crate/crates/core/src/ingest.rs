//! On-disk sequence format.
//!
//! ```text
//! <root>/meta.json                      sequence metadata, poses, cameras, label map
//! <root>/frames/<index>.xyzl            one point per line: `x y z label_id`
//! <root>/images/<camera_id>/<index>.png optional 8-bit RGB images
//! ```
//!
//! Poses are sensor-to-world, quaternion `(w, x, y, z)` plus translation in
//! meters. The world frame is whatever frame the poses were written in; this
//! crate assigns it no further meaning. Camera intrinsics describe rectified
//! images (no distortion model). Camera axes: +z forward, +x right, +y down.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CoordinateFrame, FramePose, LabeledPointCloud, Point3, SemanticClass};

pub const META_FILE: &str = "meta.json";
pub const FRAMES_DIR: &str = "frames";
pub const IMAGES_DIR: &str = "images";
pub const FRAME_EXTENSION: &str = "xyzl";

/// Total mapping from source label ids to pipeline classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(BTreeMap<i64, SemanticClass>);

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: i64, class: SemanticClass) -> Self {
        self.0.insert(id, class);
        self
    }

    pub fn insert(&mut self, id: i64, class: SemanticClass) {
        self.0.insert(id, class);
    }

    pub fn get(&self, id: i64) -> Option<SemanticClass> {
        self.0.get(&id).copied()
    }

    /// Smallest source id mapped to `class`; used when writing clouds back
    /// out.
    pub fn canonical_id(&self, class: SemanticClass) -> Option<i64> {
        self.0
            .iter()
            .find_map(|(&id, &c)| (c == class).then_some(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, SemanticClass)> + '_ {
        self.0.iter().map(|(&id, &c)| (id, c))
    }
}

/// Maps raw label ids onto pipeline classes. Fails on the first unmapped id.
pub fn remap_labels(raw_ids: &[i64], label_map: &LabelMap) -> Result<Vec<SemanticClass>> {
    raw_ids
        .iter()
        .enumerate()
        .map(|(row, &id)| label_map.get(id).ok_or(Error::UnmappedLabel { id, row }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One mounted camera with its per-frame camera-to-world poses.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub camera_id: String,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
    pub poses: BTreeMap<u32, FramePose>,
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        let ok = fx > 0.0
            && fy > 0.0
            && (0.0..self.width as f64).contains(&cx)
            && (0.0..self.height as f64).contains(&cy);
        if !ok {
            return Err(Error::Format(format!(
                "camera '{}': invalid intrinsics {:?} for {}x{} image",
                self.camera_id, self.intrinsics, self.width, self.height
            )));
        }
        for pose in self.poses.values() {
            pose.validate()?;
        }
        Ok(())
    }

    pub fn pose(&self, frame_index: u32) -> Result<&FramePose> {
        self.poses
            .get(&frame_index)
            .ok_or_else(|| Error::MissingCameraPose {
                camera_id: self.camera_id.clone(),
                frame_index,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: LabeledPointCloud,
    pub pose: FramePose,
}

impl Frame {
    pub fn frame_index(&self) -> u32 {
        self.pose.frame_index
    }
}

/// A recorded drive: sensor-frame clouds ordered by frame index, their poses,
/// and the camera rigs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub sequence_id: String,
    pub frames: Vec<Frame>,
    pub cameras: Vec<CameraRig>,
    pub label_map: LabelMap,
    /// Directory holding `images/`, when the sequence came from disk.
    pub image_root: Option<PathBuf>,
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        for w in self.frames.windows(2) {
            if w[1].frame_index() <= w[0].frame_index() {
                return Err(Error::Format(format!(
                    "frame indices not strictly increasing: {} then {}",
                    w[0].frame_index(),
                    w[1].frame_index()
                )));
            }
        }
        for f in &self.frames {
            f.pose.validate()?;
            if f.cloud.coordinate_frame() != CoordinateFrame::Sensor {
                return Err(Error::WrongFrame {
                    expected: CoordinateFrame::Sensor,
                    actual: f.cloud.coordinate_frame(),
                });
            }
        }
        for c in &self.cameras {
            c.validate()?;
        }
        Ok(())
    }

    pub fn image_path(&self, camera_id: &str, frame_index: u32) -> Option<PathBuf> {
        self.image_root
            .as_ref()
            .map(|root| image_path(root, camera_id, frame_index))
    }
}

pub fn frame_path(root: &Path, frame_index: u32) -> PathBuf {
    root.join(FRAMES_DIR)
        .join(format!("{frame_index}.{FRAME_EXTENSION}"))
}

pub fn image_path(root: &Path, camera_id: &str, frame_index: u32) -> PathBuf {
    root.join(IMAGES_DIR)
        .join(camera_id)
        .join(format!("{frame_index}.png"))
}

/// Row counts gathered while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub frames: usize,
    pub rows_loaded: usize,
    pub rows_rejected: usize,
    pub points_per_frame: Vec<usize>,
}

// ---- meta.json schema ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_index: u32,
    /// `[w, x, y, z]`
    pub rotation: [f64; 4],
    /// `[x, y, z]`, meters
    pub translation: [f64; 3],
}

impl From<&FramePose> for PoseRecord {
    fn from(p: &FramePose) -> Self {
        Self {
            frame_index: p.frame_index,
            rotation: p.rotation,
            translation: p.translation.to_array(),
        }
    }
}

impl From<&PoseRecord> for FramePose {
    fn from(r: &PoseRecord) -> Self {
        FramePose::new(r.rotation, Point3::from(r.translation), r.frame_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub camera_id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub poses: Vec<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub frame_count: usize,
    pub label_map: LabelMap,
    pub lidar_poses: Vec<PoseRecord>,
    pub cameras: Vec<CameraRecord>,
}

pub fn read_meta(root: &Path) -> Result<SequenceMeta> {
    let path = root.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Parses one `.xyzl` frame file into points and raw label ids.
///
/// Blank lines are skipped; row numbers count every line from 0.
pub fn parse_frame(path: &Path, text: &str) -> Result<(Vec<Point3>, Vec<i64>, Vec<usize>)> {
    let mut points = Vec::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut non_finite: Option<(usize, usize)> = None;

    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            message,
        };
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.len() != 4 {
            return Err(malformed(format!(
                "expected 4 fields, found {}",
                fields.len()
            )));
        }
        let mut xyz = [0.0; 3];
        for (k, f) in fields[..3].iter().enumerate() {
            xyz[k] = f
                .parse::<f64>()
                .map_err(|e| malformed(format!("bad coordinate '{f}': {e}")))?;
        }
        let id = fields[3]
            .parse::<i64>()
            .map_err(|e| malformed(format!("bad label id '{}': {e}", fields[3])))?;
        let p = Point3::from(xyz);
        if !p.is_finite() {
            let entry = non_finite.get_or_insert((row, 0));
            entry.1 += 1;
            continue;
        }
        points.push(p);
        ids.push(id);
        rows.push(row);
    }

    if let Some((first_row, count)) = non_finite {
        return Err(Error::NonFinite {
            path: path.to_path_buf(),
            first_row,
            count,
        });
    }
    Ok((points, ids, rows))
}

fn load_frame(root: &Path, pose: FramePose, label_map: &LabelMap) -> Result<Frame> {
    let path = frame_path(root, pose.frame_index);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (points, ids, rows) = parse_frame(&path, &text)?;
    let classes = remap_labels(&ids, label_map).map_err(|e| match e {
        Error::UnmappedLabel { id, row } => Error::UnmappedLabel { id, row: rows[row] },
        other => other,
    })?;
    let cloud = LabeledPointCloud::new(
        points,
        classes,
        pose.frame_index.to_string(),
        CoordinateFrame::Sensor,
    )?;
    Ok(Frame { cloud, pose })
}

fn frame_files(root: &Path) -> Result<BTreeSet<u32>> {
    let dir = root.join(FRAMES_DIR);
    let mut indices = BTreeSet::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some(FRAME_EXTENSION) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let index = stem.parse::<u32>().map_err(|_| {
            Error::Format(format!(
                "frame file name is not an index: {}",
                path.display()
            ))
        })?;
        if !indices.insert(index) {
            return Err(Error::Format(format!("duplicate frame index {index}")));
        }
    }
    Ok(indices)
}

/// Loads a sequence directory. Every frame file must have a pose and every
/// pose a frame file; anything else is an error rather than a partial load.
pub fn load_sequence(root: &Path, label_map: &LabelMap) -> Result<(Sequence, LoadReport)> {
    let meta = read_meta(root)?;
    let files = frame_files(root)?;

    let mut poses: BTreeMap<u32, FramePose> = BTreeMap::new();
    for rec in &meta.lidar_poses {
        if poses.insert(rec.frame_index, rec.into()).is_some() {
            return Err(Error::Format(format!(
                "duplicate pose for frame {}",
                rec.frame_index
            )));
        }
    }
    if let Some(&missing) = files.iter().find(|i| !poses.contains_key(i)) {
        return Err(Error::MissingPose {
            frame_index: missing,
        });
    }
    if let Some(&orphan) = poses.keys().find(|i| !files.contains(i)) {
        return Err(Error::Format(format!(
            "pose for frame {orphan} has no frame file"
        )));
    }
    if files.len() != meta.frame_count {
        return Err(Error::Format(format!(
            "meta.json declares {} frames, found {} frame files",
            meta.frame_count,
            files.len()
        )));
    }

    let mut frames: Vec<Frame> = poses
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|pose| load_frame(root, pose, label_map))
        .collect::<Result<_>>()?;
    frames.sort_by_key(Frame::frame_index);

    let cameras = meta
        .cameras
        .iter()
        .map(|c| CameraRig {
            camera_id: c.camera_id.clone(),
            intrinsics: Intrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
            },
            width: c.width,
            height: c.height,
            poses: c.poses.iter().map(|r| (r.frame_index, r.into())).collect(),
        })
        .collect();

    let sequence = Sequence {
        sequence_id: meta.sequence_id,
        frames,
        cameras,
        label_map: label_map.clone(),
        image_root: Some(root.to_path_buf()),
    };
    sequence.validate()?;

    let points_per_frame: Vec<usize> = sequence.frames.iter().map(|f| f.cloud.len()).collect();
    let report = LoadReport {
        frames: sequence.frames.len(),
        rows_loaded: points_per_frame.iter().sum(),
        rows_rejected: 0,
        points_per_frame,
    };
    Ok((sequence, report))
}

/// Loads a sequence using the label map stored in its own `meta.json`.
pub fn load_sequence_with_own_labels(root: &Path) -> Result<(Sequence, LoadReport)> {
    let meta = read_meta(root)?;
    load_sequence(root, &meta.label_map)
}

/// Writes `cloud` as `.xyzl` text using each class's canonical label id.
/// Coordinates use the shortest round-trip decimal representation.
pub fn write_xyzl(path: &Path, cloud: &LabeledPointCloud, label_map: &LabelMap) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (p, class) in cloud.iter() {
        let id = label_map
            .canonical_id(class)
            .ok_or_else(|| Error::Format(format!("label map has no id for class {class}")))?;
        writeln!(w, "{} {} {} {}", p.x, p.y, p.z, id).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn sequence_meta(sequence: &Sequence) -> SequenceMeta {
    SequenceMeta {
        sequence_id: sequence.sequence_id.clone(),
        frame_count: sequence.frames.len(),
        label_map: sequence.label_map.clone(),
        lidar_poses: sequence.frames.iter().map(|f| (&f.pose).into()).collect(),
        cameras: sequence
            .cameras
            .iter()
            .map(|c| CameraRecord {
                camera_id: c.camera_id.clone(),
                fx: c.intrinsics.fx,
                fy: c.intrinsics.fy,
                cx: c.intrinsics.cx,
                cy: c.intrinsics.cy,
                width: c.width,
                height: c.height,
                poses: c.poses.values().map(PoseRecord::from).collect(),
            })
            .collect(),
    }
}

/// Writes `sequence` under `root` in the format read by [`load_sequence`].
pub fn write_sequence(sequence: &Sequence, root: &Path) -> Result<()> {
    sequence.validate()?;
    let frames_dir = root.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let meta_path = root.join(META_FILE);
    let json = serde_json::to_string_pretty(&sequence_meta(sequence))
        .map_err(|e| Error::json(&meta_path, e))?;
    fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;

    for frame in &sequence.frames {
        write_xyzl(
            &frame_path(root, frame.frame_index()),
            &frame.cloud,
            &sequence.label_map,
        )?;
    }
    Ok(())
}
