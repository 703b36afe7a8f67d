//! Projection of world points into the sequence's camera images.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{CameraRig, Sequence};
use crate::types::{CoordinateFrame, LabeledPointCloud, Point3};

pub const MARKER_RADIUS: i64 = 3;
pub const MARKER_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
pub const ANNOTATION_HEADER: &str = "frame,camera,u,v,point_index";

#[derive(Debug, Clone, PartialEq)]
pub struct PixelHit {
    pub camera_id: String,
    pub frame_index: u32,
    pub u: f64,
    pub v: f64,
    pub point_index: usize,
}

/// Pinhole projection of `p` into `camera` at `frame_index`. `None` when the
/// point is behind the camera or lands outside the image.
pub fn world_to_pixel(
    camera: &CameraRig,
    frame_index: u32,
    p: Point3,
) -> Result<Option<(f64, f64)>> {
    let rigid = camera.pose(frame_index)?.rigid()?;
    Ok(project_camera_point(camera, rigid.apply_inverse(p)))
}

fn project_camera_point(camera: &CameraRig, c: Point3) -> Option<(f64, f64)> {
    if !(c.z > 0.0) {
        return None;
    }
    let k = &camera.intrinsics;
    let u = k.fx * c.x / c.z + k.cx;
    let v = k.fy * c.y / c.z + k.cy;
    let inside = u >= 0.0 && u < camera.width as f64 && v >= 0.0 && v < camera.height as f64;
    inside.then_some((u, v))
}

/// All in-image hits of `points` for each requested frame and each camera,
/// grouped by frame (in request order), then camera (rig order), then point
/// index. Cameras without a pose for a frame are skipped.
pub fn project_points(
    sequence: &Sequence,
    points: &LabeledPointCloud,
    frame_indices: &[u32],
) -> Result<Vec<PixelHit>> {
    if points.coordinate_frame() != CoordinateFrame::World {
        return Err(Error::WrongFrame {
            expected: CoordinateFrame::World,
            actual: points.coordinate_frame(),
        });
    }
    let mut hits = Vec::new();
    for &frame_index in frame_indices {
        for camera in &sequence.cameras {
            let Ok(pose) = camera.pose(frame_index) else {
                log::debug!(
                    "camera {} has no pose for frame {frame_index}",
                    camera.camera_id
                );
                continue;
            };
            let rigid = pose.rigid()?;
            let group: Vec<PixelHit> = points
                .points()
                .par_iter()
                .enumerate()
                .filter_map(|(i, &p)| {
                    project_camera_point(camera, rigid.apply_inverse(p)).map(|(u, v)| PixelHit {
                        camera_id: camera.camera_id.clone(),
                        frame_index,
                        u,
                        v,
                        point_index: i,
                    })
                })
                .collect();
            hits.extend(group);
        }
    }
    Ok(hits)
}

pub fn annotation_file_name(frame_index: u32, camera_id: &str) -> String {
    format!("{frame_index}_{camera_id}.csv")
}

pub fn overlay_file_name(frame_index: u32, camera_id: &str) -> String {
    format!("{frame_index}_{camera_id}.png")
}

/// Annotation CSV text for one (frame, camera) group.
pub fn annotation_csv(hits: &[&PixelHit]) -> String {
    let mut s = String::with_capacity(32 * (hits.len() + 1));
    s.push_str(ANNOTATION_HEADER);
    s.push('\n');
    for h in hits {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            h.frame_index, h.camera_id, h.u, h.v, h.point_index
        ));
    }
    s
}

/// Paints a filled disk of [`MARKER_RADIUS`] at each hit, centered on the
/// rounded pixel.
pub fn draw_hits(image: &mut RgbImage, hits: &[&PixelHit]) {
    let (w, h) = (image.width() as i64, image.height() as i64);
    for hit in hits {
        let (cu, cv) = (hit.u.round() as i64, hit.v.round() as i64);
        for dv in -MARKER_RADIUS..=MARKER_RADIUS {
            for du in -MARKER_RADIUS..=MARKER_RADIUS {
                if du * du + dv * dv > MARKER_RADIUS * MARKER_RADIUS {
                    continue;
                }
                let (x, y) = (cu + du, cv + dv);
                if x >= 0 && x < w && y >= 0 && y < h {
                    image.put_pixel(x as u32, y as u32, MARKER_COLOR);
                }
            }
        }
    }
}

/// Writes `annotations/<frame>_<camera>.csv` for every requested frame and
/// camera, and `overlays/<frame>_<camera>.png` where a source image exists.
/// Returns the written paths in write order.
pub fn render_overlays(
    sequence: &Sequence,
    frame_indices: &[u32],
    hits: &[PixelHit],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let ann_dir = out_dir.join("annotations");
    let ovl_dir = out_dir.join("overlays");
    fs::create_dir_all(&ann_dir).map_err(|e| Error::io(&ann_dir, e))?;

    let mut manifest = Vec::new();
    for &frame_index in frame_indices {
        for camera in &sequence.cameras {
            let group: Vec<&PixelHit> = hits
                .iter()
                .filter(|h| h.frame_index == frame_index && h.camera_id == camera.camera_id)
                .collect();

            let csv_path = ann_dir.join(annotation_file_name(frame_index, &camera.camera_id));
            let mut f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
            f.write_all(annotation_csv(&group).as_bytes())
                .map_err(|e| Error::io(&csv_path, e))?;
            manifest.push(csv_path);

            let Some(src) = sequence.image_path(&camera.camera_id, frame_index) else {
                continue;
            };
            if !src.is_file() {
                continue;
            }
            let mut img = image::open(&src)
                .map_err(|e| Error::Image {
                    path: src.clone(),
                    source: e,
                })?
                .to_rgb8();
            draw_hits(&mut img, &group);
            fs::create_dir_all(&ovl_dir).map_err(|e| Error::io(&ovl_dir, e))?;
            let dst = ovl_dir.join(overlay_file_name(frame_index, &camera.camera_id));
            img.save(&dst).map_err(|e| Error::Image {
                path: dst.clone(),
                source: e,
            })?;
            manifest.push(dst);
        }
    }
    Ok(manifest)
}
