//! Deterministic synthetic street scenes with ground truth.
//!
//! A scene is generated once in the world frame (road ribbon, trees,
//! planted branches, clutter), then split across frames round-robin: world
//! point `i` is observed by frame `i % frame_count` as row
//! `i / frame_count`. Each frame stores its points in the sensor frame of a
//! vehicle driving along the road centerline, with a six-camera ring.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::point_in_ring;
use crate::ingest::{self, CameraRig, Frame, Intrinsics, LabelMap, Sequence};
use crate::types::{CoordinateFrame, FramePose, LabeledPointCloud, Point3, SemanticClass, Vec2};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub const ROAD_LABEL: i64 = 7;
pub const VEGETATION_LABEL: i64 = 5;
pub const OTHER_LABEL: i64 = 1;

/// Label ids used by generated scenes.
pub fn default_label_map() -> LabelMap {
    LabelMap::new()
        .with(OTHER_LABEL, SemanticClass::Other)
        .with(VEGETATION_LABEL, SemanticClass::Vegetation)
        .with(ROAD_LABEL, SemanticClass::Road)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadLayout {
    /// Uniformly random points over the ribbon.
    Uniform,
    /// Axis-aligned lattice with spacing `1/sqrt(density)`, offset half a
    /// spacing from the bounding box so no point sits on a straight edge.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
    /// Points per square meter.
    pub density: f64,
    pub layout: RoadLayout,
    /// Road surface height rises by `grade` meters per meter of x.
    pub grade: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub trunk: [f64; 2],
    /// Trunk points per meter of height.
    pub trunk_density: f64,
    /// Crown center, z above local street level.
    pub crown_center: [f64; 3],
    pub crown_radius: f64,
    /// Points per cubic meter.
    pub crown_density: f64,
    /// When false, crown points above the road are not generated.
    pub overhang: bool,
}

/// A line of vegetation points over the road at a height band above the
/// local street level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub min_height: f64,
    pub max_height: f64,
    pub count: usize,
}

/// `Other`-class points scattered in a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRingSpec {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Write a plain gray PNG per camera and frame.
    pub write_images: bool,
}

impl Default for CameraRingSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            focal: 600.0,
            write_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub sequence_id: String,
    pub road: RoadSpec,
    pub trees: Vec<TreeSpec>,
    pub branches: Vec<BranchSpec>,
    pub clutter: Vec<ClutterSpec>,
    pub frame_count: usize,
    pub sensor_height: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub cameras: CameraRingSpec,
    /// Clearance height used for the ground-truth inlier set.
    pub clearance_height: f64,
}

impl SceneSpec {
    /// Straight road along +x with nothing else in the scene.
    pub fn straight_road(length: f64, width: f64, density: f64) -> Self {
        Self {
            sequence_id: "synthetic".into(),
            road: RoadSpec {
                centerline: vec![[0.0, 0.0], [length, 0.0]],
                width,
                density,
                layout: RoadLayout::Uniform,
                grade: 0.0,
            },
            trees: Vec::new(),
            branches: Vec::new(),
            clutter: Vec::new(),
            frame_count: 1,
            sensor_height: 1.8,
            noise_sigma: 0.02,
            seed: 0,
            cameras: CameraRingSpec::default(),
            clearance_height: 4.0,
        }
    }

    /// 100 m road with one overhanging branch of 50 points at 2.5–3.5 m, a
    /// crown over the road at 6–9 m, roadside trees that do not overhang,
    /// and some clutter.
    pub fn branch_scene(seed: u64) -> Self {
        let mut spec = Self::straight_road(100.0, 8.0, 20.0);
        spec.sequence_id = "branch".into();
        spec.seed = seed;
        spec.branches.push(BranchSpec {
            from: [40.0, -1.5],
            to: [46.0, 1.0],
            min_height: 2.5,
            max_height: 3.5,
            count: 50,
        });
        spec.trees.push(TreeSpec {
            trunk: [70.0, 7.0],
            trunk_density: 20.0,
            crown_center: [70.0, 1.0, 7.5],
            crown_radius: 1.5,
            crown_density: 30.0,
            overhang: true,
        });
        for (i, x) in [10.0, 25.0, 55.0, 85.0].into_iter().enumerate() {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            spec.trees.push(TreeSpec {
                trunk: [x, side * 7.5],
                trunk_density: 20.0,
                crown_center: [x, side * 7.5, 5.0],
                crown_radius: 2.0,
                crown_density: 20.0,
                overhang: false,
            });
        }
        spec.clutter.push(ClutterSpec {
            min: [0.0, 9.0, 0.0],
            max: [100.0, 12.0, 6.0],
            count: 2000,
        });
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("scene: {m}")));
        if !(self.road.width > 0.0) {
            return bad("road width must be > 0");
        }
        if !(self.road.density > 0.0) {
            return bad("road density must be > 0");
        }
        if self.road.centerline.len() < 2 {
            return bad("centerline needs at least two vertices");
        }
        if self.frame_count == 0 {
            return bad("frame_count must be >= 1");
        }
        if self
            .trees
            .iter()
            .any(|t| !(t.crown_density > 0.0) || !(t.crown_radius > 0.0) || t.trunk_density < 0.0)
        {
            return bad("tree densities and radii must be > 0");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        Ok(())
    }
}

/// Ground truth for a generated scene. Indices refer to world point order
/// (see the module docs for the frame/row mapping).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame_count: usize,
    pub clearance_height: f64,
    pub band_width: f64,
    /// Vegetation points inside the true clearance volume.
    pub inliers: Vec<usize>,
    /// Road points within `band_width` of the true road edge.
    pub boundary_band: Vec<usize>,
    /// The true road outline.
    pub road_polygon: Vec<[f64; 2]>,
}

impl GroundTruth {
    pub fn frame_of(&self, world_index: usize) -> usize {
        world_index % self.frame_count
    }

    pub fn row_of(&self, world_index: usize) -> usize {
        world_index / self.frame_count
    }

    /// Ground-truth inliers observed by the frames at the given positions.
    pub fn inliers_in_frames(&self, positions: &[usize]) -> Vec<usize> {
        self.inliers
            .iter()
            .copied()
            .filter(|&i| positions.contains(&self.frame_of(i)))
            .collect()
    }
}

pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub sequence: Sequence,
    pub truth: GroundTruth,
    /// All points in the world frame, as concatenation reproduces them.
    pub world: LabeledPointCloud,
}

/// Offset outline of the road ribbon (left side forward, right side back),
/// with mitered joints.
pub fn ribbon_polygon(centerline: &[[f64; 2]], width: f64) -> Vec<Vec2> {
    let c: Vec<Vec2> = centerline.iter().map(|p| Vec2::new(p[0], p[1])).collect();
    let half = 0.5 * width;
    let normals: Vec<Vec2> = c
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let n = d.norm();
            Vec2::new(-d.y / n, d.x / n)
        })
        .collect();
    let offsets: Vec<Vec2> = (0..c.len())
        .map(|k| {
            let n = match k {
                0 => normals[0],
                k if k == c.len() - 1 => normals[k - 1],
                k => {
                    let (a, b) = (normals[k - 1], normals[k]);
                    let m = Vec2::new(a.x + b.x, a.y + b.y);
                    let m = Vec2::new(m.x / m.norm(), m.y / m.norm());
                    let scale = 1.0 / m.dot(b);
                    return Vec2::new(m.x * half * scale, m.y * half * scale);
                }
            };
            Vec2::new(n.x * half, n.y * half)
        })
        .collect();
    let mut poly: Vec<Vec2> = c
        .iter()
        .zip(&offsets)
        .map(|(p, o)| Vec2::new(p.x + o.x, p.y + o.y))
        .collect();
    poly.extend(
        c.iter()
            .zip(&offsets)
            .rev()
            .map(|(p, o)| Vec2::new(p.x - o.x, p.y - o.y)),
    );
    poly
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum::<f64>()
        .abs()
}

fn distance_to_segment(q: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((q - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (q - Vec2::new(a.x + t * ab.x, a.y + t * ab.y)).norm()
}

/// Planar distance from `q` to the closest edge of the closed ring.
pub fn distance_to_boundary(ring: &[Vec2], q: Vec2) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| distance_to_segment(q, ring[i], ring[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn ground_z(road: &RoadSpec, x: f64) -> f64 {
    road.grade * x
}

fn bbox(poly: &[Vec2]) -> (Vec2, Vec2) {
    poly.iter().fold(
        (
            Vec2::new(f64::INFINITY, f64::INFINITY),
            Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| {
            (
                Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        },
    )
}

/// Vehicle poses along the centerline, evenly spaced by arclength, yawed
/// along the local segment direction.
fn vehicle_poses(spec: &SceneSpec) -> Vec<FramePose> {
    let c = &spec.road.centerline;
    let seg_len: Vec<f64> = c
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    let total: f64 = seg_len.iter().sum();
    (0..spec.frame_count)
        .map(|k| {
            let s = if spec.frame_count == 1 {
                0.0
            } else {
                total * k as f64 / (spec.frame_count - 1) as f64
            };
            let mut acc = 0.0;
            let mut seg = seg_len.len() - 1;
            for (i, &l) in seg_len.iter().enumerate() {
                if s <= acc + l {
                    seg = i;
                    break;
                }
                acc += l;
            }
            let t = ((s - acc) / seg_len[seg]).clamp(0.0, 1.0);
            let (a, b) = (c[seg], c[seg + 1]);
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            let yaw = (b[1] - a[1]).atan2(b[0] - a[0]);
            FramePose::from_yaw(
                yaw,
                Point3::new(x, y, ground_z(&spec.road, x) + spec.sensor_height),
                k as u32,
            )
        })
        .collect()
}

const CAMERA_NAMES: [&str; 6] = [
    "front_camera",
    "front_left_camera",
    "back_left_camera",
    "back_camera",
    "back_right_camera",
    "front_right_camera",
];

/// Mounting of camera `k` on the vehicle: yaw `k·60°`, +z forward, +x right,
/// +y down.
pub fn camera_mount(k: usize) -> FramePose {
    let a = (k as f64 * 60.0).to_radians();
    let (s, c) = a.sin_cos();
    let x_axis = [s, -c, 0.0];
    let y_axis = [0.0, 0.0, -1.0];
    let z_axis = [c, s, 0.0];
    let m = std::array::from_fn(|r| [x_axis[r], y_axis[r], z_axis[r]]);
    FramePose::from_rotation_matrix(m, Point3::ORIGIN, 0)
}

fn camera_rigs(spec: &SceneSpec, vehicle: &[FramePose]) -> Result<Vec<CameraRig>> {
    let cs = &spec.cameras;
    CAMERA_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mount = camera_mount(k);
            let poses = vehicle
                .iter()
                .map(|v| Ok((v.frame_index, v.compose(&mount)?)))
                .collect::<Result<_>>()?;
            Ok(CameraRig {
                camera_id: (*name).to_string(),
                intrinsics: Intrinsics {
                    fx: cs.focal,
                    fy: cs.focal,
                    cx: cs.width as f64 / 2.0,
                    cy: cs.height as f64 / 2.0,
                },
                width: cs.width,
                height: cs.height,
                poses,
            })
        })
        .collect()
}

struct Builder {
    points: Vec<Point3>,
    classes: Vec<SemanticClass>,
}

impl Builder {
    fn push(&mut self, p: Point3, class: SemanticClass) {
        self.points.push(p);
        self.classes.push(class);
    }
}

fn road_points(spec: &RoadSpec, ribbon: &[Vec2], rng: &mut ChaCha8Rng, out: &mut Builder) {
    let (lo, hi) = bbox(ribbon);
    match spec.layout {
        RoadLayout::Uniform => {
            let target = (spec.density * polygon_area(ribbon)).round() as usize;
            let mut made = 0;
            while made < target {
                let q = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
                if point_in_ring(ribbon, q) {
                    out.push(
                        Point3::new(q.x, q.y, ground_z(spec, q.x)),
                        SemanticClass::Road,
                    );
                    made += 1;
                }
            }
        }
        RoadLayout::Grid => {
            let h = 1.0 / spec.density.sqrt();
            let nx = ((hi.x - lo.x) / h).floor() as usize;
            let ny = ((hi.y - lo.y) / h).floor() as usize;
            for i in 0..nx {
                for j in 0..ny {
                    let q = Vec2::new(lo.x + (i as f64 + 0.5) * h, lo.y + (j as f64 + 0.5) * h);
                    if point_in_ring(ribbon, q) {
                        out.push(
                            Point3::new(q.x, q.y, ground_z(spec, q.x)),
                            SemanticClass::Road,
                        );
                    }
                }
            }
        }
    }
}

fn tree_points(
    spec: &SceneSpec,
    tree: &TreeSpec,
    ribbon: &[Vec2],
    rng: &mut ChaCha8Rng,
    out: &mut Builder,
) {
    let [tx, ty] = tree.trunk;
    let base = ground_z(&spec.road, tx);
    let crown_bottom = tree.crown_center[2] - tree.crown_radius;
    let trunk_count = (tree.trunk_density * crown_bottom.max(0.0)).round() as usize;
    for _ in 0..trunk_count {
        let h = rng.random_range(0.0..crown_bottom);
        out.push(Point3::new(tx, ty, base + h), SemanticClass::Vegetation);
    }

    let r = tree.crown_radius;
    let volume = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    let target = (tree.crown_density * volume).round() as usize;
    let [cx, cy, cz] = tree.crown_center;
    let mut made = 0;
    while made < target {
        let d = [
            rng.random_range(-r..r),
            rng.random_range(-r..r),
            rng.random_range(-r..r),
        ];
        if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] > r * r {
            continue;
        }
        let q = Vec2::new(cx + d[0], cy + d[1]);
        if !tree.overhang && point_in_ring(ribbon, q) {
            continue;
        }
        out.push(
            Point3::new(q.x, q.y, ground_z(&spec.road, q.x) + cz + d[2]),
            SemanticClass::Vegetation,
        );
        made += 1;
    }
}

fn branch_points(spec: &SceneSpec, b: &BranchSpec, rng: &mut ChaCha8Rng, out: &mut Builder) {
    for _ in 0..b.count {
        let t = rng.random_range(0.0..=1.0);
        let x = b.from[0] + t * (b.to[0] - b.from[0]);
        let y = b.from[1] + t * (b.to[1] - b.from[1]);
        let h = rng.random_range(b.min_height..=b.max_height);
        out.push(
            Point3::new(x, y, ground_z(&spec.road, x) + h),
            SemanticClass::Vegetation,
        );
    }
}

fn clutter_points(c: &ClutterSpec, rng: &mut ChaCha8Rng, out: &mut Builder) {
    for _ in 0..c.count {
        let p: [f64; 3] = std::array::from_fn(|k| rng.random_range(c.min[k]..=c.max[k]));
        out.push(Point3::from(p), SemanticClass::Other);
    }
}

/// Generates the scene described by `spec`. Same spec, same output.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ribbon = ribbon_polygon(&spec.road.centerline, spec.road.width);

    let mut b = Builder {
        points: Vec::new(),
        classes: Vec::new(),
    };
    road_points(&spec.road, &ribbon, &mut rng, &mut b);
    for tree in &spec.trees {
        tree_points(spec, tree, &ribbon, &mut rng, &mut b);
    }
    for branch in &spec.branches {
        branch_points(spec, branch, &mut rng, &mut b);
    }
    for c in &spec.clutter {
        clutter_points(c, &mut rng, &mut b);
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma is finite and positive");
        for p in &mut b.points {
            p.x += normal.sample(&mut rng);
            p.y += normal.sample(&mut rng);
            p.z += normal.sample(&mut rng);
        }
    }

    let vehicle = vehicle_poses(spec);
    let rigids: Vec<_> = vehicle
        .iter()
        .map(FramePose::rigid)
        .collect::<Result<_>>()?;
    let f = spec.frame_count;

    // Sensor-frame rows per frame, and the world points as the forward
    // transform will reproduce them.
    let mut frame_points: Vec<Vec<Point3>> = vec![Vec::new(); f];
    let mut frame_classes: Vec<Vec<SemanticClass>> = vec![Vec::new(); f];
    let mut observed = Vec::with_capacity(b.points.len());
    for (i, (&p, &class)) in b.points.iter().zip(&b.classes).enumerate() {
        let k = i % f;
        let sensor = rigids[k].apply_inverse(p);
        frame_points[k].push(sensor);
        frame_classes[k].push(class);
        observed.push(rigids[k].apply(sensor));
    }

    let frames: Vec<Frame> = frame_points
        .into_iter()
        .zip(frame_classes)
        .zip(&vehicle)
        .map(|((pts, cls), pose)| {
            Ok(Frame {
                cloud: LabeledPointCloud::new(
                    pts,
                    cls,
                    pose.frame_index.to_string(),
                    CoordinateFrame::Sensor,
                )?,
                pose: *pose,
            })
        })
        .collect::<Result<_>>()?;

    let band_width = 1.0 / spec.road.density.sqrt();
    let mut inliers = Vec::new();
    let mut boundary_band = Vec::new();
    for (i, (p, &class)) in observed.iter().zip(&b.classes).enumerate() {
        match class {
            SemanticClass::Vegetation => {
                let h = p.z - ground_z(&spec.road, p.x);
                if point_in_ring(&ribbon, p.xy()) && (0.0..=spec.clearance_height).contains(&h) {
                    inliers.push(i);
                }
            }
            SemanticClass::Road => {
                if distance_to_boundary(&ribbon, p.xy()) <= band_width {
                    boundary_band.push(i);
                }
            }
            SemanticClass::Other => {}
        }
    }

    let sequence = Sequence {
        sequence_id: spec.sequence_id.clone(),
        frames,
        cameras: camera_rigs(spec, &vehicle)?,
        label_map: default_label_map(),
        image_root: None,
    };
    let world = LabeledPointCloud::new(
        observed,
        b.classes,
        spec.sequence_id.clone(),
        CoordinateFrame::World,
    )?;
    let truth = GroundTruth {
        frame_count: f,
        clearance_height: spec.clearance_height,
        band_width,
        inliers,
        boundary_band,
        road_polygon: ribbon.iter().map(|v| [v.x, v.y]).collect(),
    };
    Ok(SyntheticScene {
        spec: spec.clone(),
        sequence,
        truth,
        world,
    })
}

/// Writes the scene's sequence, `ground_truth.json`, and optional images
/// under `root`.
pub fn write_scene(scene: &SyntheticScene, root: &Path) -> Result<()> {
    ingest::write_sequence(&scene.sequence, root)?;
    let gt_path = root.join(GROUND_TRUTH_FILE);
    let json = serde_json::to_string_pretty(&scene.truth).map_err(|e| Error::json(&gt_path, e))?;
    fs::write(&gt_path, json + "\n").map_err(|e| Error::io(&gt_path, e))?;

    if scene.spec.cameras.write_images {
        let cs = &scene.spec.cameras;
        let img = RgbImage::from_pixel(cs.width, cs.height, Rgb([96, 96, 96]));
        for cam in &scene.sequence.cameras {
            for &frame in cam.poses.keys() {
                let path = ingest::image_path(root, &cam.camera_id, frame);
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                img.save(&path).map_err(|e| Error::Image {
                    path: path.clone(),
                    source: e,
                })?;
            }
        }
    }
    Ok(())
}

pub fn read_ground_truth(root: &Path) -> Result<GroundTruth> {
    let path = root.join(GROUND_TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}
