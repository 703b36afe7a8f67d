//! Geometric and semantic value types shared by every pipeline stage.
//!
//! Coordinates are `f64` throughout: concatenated sequences live in large
//! world frames where single precision loses centimeters.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted for pose quaternions.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn xy(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn distance_xy(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub(crate) fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub(crate) fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;

    fn sub(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x - other.x, self.y - other.y)
    }
}

/// Planar vector; the road is treated as a plane so most geometry drops z.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise angle from the +x axis, in radians.
    pub fn azimuth(self) -> f64 {
        self.y.atan2(self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticClass {
    Road,
    Vegetation,
    Other,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 3] = [
        SemanticClass::Road,
        SemanticClass::Vegetation,
        SemanticClass::Other,
    ];
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SemanticClass::Road => "road",
            SemanticClass::Vegetation => "vegetation",
            SemanticClass::Other => "other",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordinateFrame {
    Sensor,
    World,
}

/// Columnar labeled point cloud. `points` and `classes` always have equal
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    points: Vec<Point3>,
    classes: Vec<SemanticClass>,
    frame_id: String,
    coordinate_frame: CoordinateFrame,
}

impl LabeledPointCloud {
    pub fn new(
        points: Vec<Point3>,
        classes: Vec<SemanticClass>,
        frame_id: impl Into<String>,
        coordinate_frame: CoordinateFrame,
    ) -> Result<Self> {
        if points.len() != classes.len() {
            return Err(Error::LengthMismatch {
                points: points.len(),
                classes: classes.len(),
            });
        }
        Ok(Self {
            points,
            classes,
            frame_id: frame_id.into(),
            coordinate_frame,
        })
    }

    pub fn empty(frame_id: impl Into<String>, coordinate_frame: CoordinateFrame) -> Self {
        Self {
            points: Vec::new(),
            classes: Vec::new(),
            frame_id: frame_id.into(),
            coordinate_frame,
        }
    }

    /// Cloud where every point carries the same class.
    pub fn uniform(
        points: Vec<Point3>,
        class: SemanticClass,
        frame_id: impl Into<String>,
        coordinate_frame: CoordinateFrame,
    ) -> Self {
        let classes = vec![class; points.len()];
        Self {
            points,
            classes,
            frame_id: frame_id.into(),
            coordinate_frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn classes(&self) -> &[SemanticClass] {
        &self.classes
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn coordinate_frame(&self) -> CoordinateFrame {
        self.coordinate_frame
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point3, SemanticClass)> + '_ {
        self.points.iter().zip(self.classes.iter().copied())
    }

    /// Keeps the points at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            classes: indices.iter().map(|&i| self.classes[i]).collect(),
            frame_id: self.frame_id.clone(),
            coordinate_frame: self.coordinate_frame,
        }
    }

    /// Keeps the points whose mask entry is true, preserving order.
    pub fn retain_mask(&self, mask: &[bool]) -> Self {
        debug_assert_eq!(mask.len(), self.len());
        let indices: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &keep)| keep.then_some(i))
            .collect();
        self.select(&indices)
    }

    pub fn extend(&mut self, other: &LabeledPointCloud) {
        self.points.extend_from_slice(&other.points);
        self.classes.extend_from_slice(&other.classes);
    }

    pub fn with_frame_id(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    pub fn into_parts(self) -> (Vec<Point3>, Vec<SemanticClass>) {
        (self.points, self.classes)
    }
}

/// Rigid sensor-to-world transform. Quaternion is `(w, x, y, z)`, active
/// rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub rotation: [f64; 4],
    pub translation: Point3,
    pub frame_index: u32,
}

impl FramePose {
    pub fn new(rotation: [f64; 4], translation: Point3, frame_index: u32) -> Self {
        Self {
            rotation,
            translation,
            frame_index,
        }
    }

    pub fn identity(frame_index: u32) -> Self {
        Self::new([1.0, 0.0, 0.0, 0.0], Point3::ORIGIN, frame_index)
    }

    /// Pose whose rotation is a yaw about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64, translation: Point3, frame_index: u32) -> Self {
        let half = 0.5 * yaw;
        Self::new([half.cos(), 0.0, 0.0, half.sin()], translation, frame_index)
    }

    /// Builds a pose from a proper rotation matrix (columns are the sensor
    /// axes in world coordinates).
    pub fn from_rotation_matrix(
        matrix: [[f64; 3]; 3],
        translation: Point3,
        frame_index: u32,
    ) -> Self {
        let m = Matrix3::from_fn(|r, c| matrix[r][c]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        let q = q.quaternion();
        Self::new([q.w, q.i, q.j, q.k], translation, frame_index)
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.rotation.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.quaternion_norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(Error::NonUnitQuaternion { norm });
        }
        Ok(())
    }

    fn unit_quaternion(&self) -> Result<UnitQuaternion<f64>> {
        self.validate()?;
        let [w, x, y, z] = self.rotation;
        Ok(UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)))
    }

    pub(crate) fn rigid(&self) -> Result<RigidTransform> {
        let q = self.unit_quaternion()?;
        Ok(RigidTransform {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: self.translation.to_vector(),
        })
    }

    /// Maps a point from the sensor frame into the world frame.
    pub fn apply(&self, p: Point3) -> Result<Point3> {
        Ok(self.rigid()?.apply(p))
    }

    /// World-to-sensor pose.
    pub fn inverse(&self) -> Result<FramePose> {
        let q = self.unit_quaternion()?;
        let inv = q.inverse();
        let t = -(inv * self.translation.to_vector());
        let c = inv.quaternion();
        Ok(FramePose::new(
            [c.w, c.i, c.j, c.k],
            Point3::from_vector(t),
            self.frame_index,
        ))
    }

    /// `self ∘ other`: first apply `other`, then `self`. Keeps `self.frame_index`.
    pub fn compose(&self, other: &FramePose) -> Result<FramePose> {
        let a = self.unit_quaternion()?;
        let b = other.unit_quaternion()?;
        let q = a * b;
        let t = a * other.translation.to_vector() + self.translation.to_vector();
        let c = q.quaternion();
        Ok(FramePose::new(
            [c.w, c.i, c.j, c.k],
            Point3::from_vector(t),
            self.frame_index,
        ))
    }
}

/// Rotation matrix plus translation, precomputed for bulk point transforms.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn apply(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// Inverse transform: `Rᵀ (p − t)`.
    pub fn apply_inverse(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation.transpose() * (p.to_vector() - self.translation))
    }
}

/// Moves a sensor-frame cloud into the world frame: `p ↦ R·p + t`.
pub fn transform_to_world(
    cloud: &LabeledPointCloud,
    pose: &FramePose,
) -> Result<LabeledPointCloud> {
    if cloud.coordinate_frame != CoordinateFrame::Sensor {
        return Err(Error::WrongFrame {
            expected: CoordinateFrame::Sensor,
            actual: cloud.coordinate_frame,
        });
    }
    let rigid = pose.rigid()?;
    Ok(LabeledPointCloud {
        points: cloud.points.iter().map(|&p| rigid.apply(p)).collect(),
        classes: cloud.classes.clone(),
        frame_id: cloud.frame_id.clone(),
        coordinate_frame: CoordinateFrame::World,
    })
}

/// Inverse of [`transform_to_world`]: expresses a world cloud in the frame
/// of the sensor at `pose`.
pub fn transform_to_sensor(
    cloud: &LabeledPointCloud,
    pose: &FramePose,
) -> Result<LabeledPointCloud> {
    if cloud.coordinate_frame != CoordinateFrame::World {
        return Err(Error::WrongFrame {
            expected: CoordinateFrame::World,
            actual: cloud.coordinate_frame,
        });
    }
    let rigid = pose.rigid()?;
    Ok(LabeledPointCloud {
        points: cloud
            .points
            .iter()
            .map(|&p| rigid.apply_inverse(p))
            .collect(),
        classes: cloud.classes.clone(),
        frame_id: cloud.frame_id.clone(),
        coordinate_frame: CoordinateFrame::Sensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rotation matrix written out from the quaternion components, kept
    /// independent of nalgebra.
    fn quaternion_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 3]; 3] {
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    fn random_unit_quaternion(rng: &mut impl Rng) -> [f64; 4] {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        q.map(|c| c / n)
    }

    fn sensor_cloud(points: Vec<Point3>) -> LabeledPointCloud {
        let classes = (0..points.len())
            .map(|i| SemanticClass::ALL[i % 3])
            .collect();
        LabeledPointCloud::new(points, classes, "f", CoordinateFrame::Sensor).unwrap()
    }

    #[test]
    fn identity_pose_keeps_coordinates() {
        let cloud = sensor_cloud(vec![
            Point3::new(1.5, -2.0, 3.25),
            Point3::new(0.0, 0.0, 0.0),
        ]);
        let out = transform_to_world(&cloud, &FramePose::identity(0)).unwrap();
        assert_eq!(out.points(), cloud.points());
        assert_eq!(out.classes(), cloud.classes());
        assert_eq!(out.coordinate_frame(), CoordinateFrame::World);
    }

    #[test]
    fn quarter_yaw_maps_x_to_y() {
        let cloud = sensor_cloud(vec![Point3::new(1.0, 0.0, 0.0)]);
        let pose = FramePose::from_yaw(std::f64::consts::FRAC_PI_2, Point3::ORIGIN, 0);
        let p = transform_to_world(&cloud, &pose).unwrap().points()[0];
        assert!((p.x - 0.0).abs() < 1e-12);
        assert!((p.y - 1.0).abs() < 1e-12);
        assert!(p.z.abs() < 1e-12);
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_unit_quaternion(&mut rng);
        let t = Point3::new(12.5, -3.0, 0.75);
        let pts: Vec<Point3> = (0..10)
            .map(|_| {
                Point3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let out = transform_to_world(&sensor_cloud(pts.clone()), &FramePose::new(q, t, 3)).unwrap();
        let m = quaternion_matrix(q);
        for (p, got) in pts.iter().zip(out.points()) {
            let v = [p.x, p.y, p.z];
            let expect: [f64; 3] =
                std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2]);
            assert!((got.x - (expect[0] + t.x)).abs() < 1e-12);
            assert!((got.y - (expect[1] + t.y)).abs() < 1e-12);
            assert!((got.z - (expect[2] + t.z)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let cloud = sensor_cloud(vec![Point3::ORIGIN]);
        let pose = FramePose::new([1.0, 0.1, 0.0, 0.0], Point3::ORIGIN, 0);
        assert!(matches!(
            transform_to_world(&cloud, &pose),
            Err(Error::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn world_cloud_is_rejected() {
        let cloud = LabeledPointCloud::empty("w", CoordinateFrame::World);
        assert!(matches!(
            transform_to_world(&cloud, &FramePose::identity(0)),
            Err(Error::WrongFrame { .. })
        ));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let r = LabeledPointCloud::new(
            vec![Point3::ORIGIN; 2],
            vec![SemanticClass::Road],
            "f",
            CoordinateFrame::Sensor,
        );
        assert!(matches!(
            r,
            Err(Error::LengthMismatch {
                points: 2,
                classes: 1
            })
        ));
    }

    #[test]
    fn rotation_matrix_round_trips_through_quaternion() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let q = random_unit_quaternion(&mut rng);
            let m = quaternion_matrix(q);
            let pose = FramePose::from_rotation_matrix(m, Point3::ORIGIN, 0);
            let back = quaternion_matrix(pose.rotation);
            for r in 0..3 {
                for c in 0..3 {
                    assert!((m[r][c] - back[r][c]).abs() < 1e-12);
                }
            }
        }
    }

    fn arb_pose() -> impl Strategy<Value = FramePose> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-500.0f64..500.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _)| {
                q.iter().map(|c| c * c).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| {
                let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
                FramePose::new(q.map(|c| c / n), Point3::from(t), 0)
            })
    }

    fn arb_points() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..20)
            .prop_map(|v| v.into_iter().map(Point3::from).collect())
    }

    proptest! {
        #[test]
        fn preserves_pairwise_distances(pose in arb_pose(), pts in arb_points()) {
            let out = transform_to_world(&sensor_cloud(pts.clone()), &pose).unwrap();
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    let before = pts[i].distance(&pts[j]);
                    let after = out.points()[i].distance(&out.points()[j]);
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn inverse_pose_round_trips(pose in arb_pose(), pts in arb_points()) {
            let world = transform_to_world(&sensor_cloud(pts.clone()), &pose).unwrap();
            let inv = pose.inverse().unwrap();
            let relabeled = LabeledPointCloud::new(
                world.points().to_vec(),
                world.classes().to_vec(),
                "f",
                CoordinateFrame::Sensor,
            ).unwrap();
            let back = transform_to_world(&relabeled, &inv).unwrap();
            for (a, b) in pts.iter().zip(back.points()) {
                prop_assert!(a.distance(b) < 1e-9);
            }
            let back2 = transform_to_sensor(&world, &pose).unwrap();
            for (a, b) in pts.iter().zip(back2.points()) {
                prop_assert!(a.distance(b) < 1e-9);
            }
        }

        #[test]
        fn class_multiset_is_invariant(pose in arb_pose(), pts in arb_points()) {
            let cloud = sensor_cloud(pts);
            let out = transform_to_world(&cloud, &pose).unwrap();
            let mut a = cloud.classes().to_vec();
            let mut b = out.classes().to_vec();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
