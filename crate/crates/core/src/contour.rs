//! Road boundary detection by angular gaps.
//!
//! A sample point is on the contour when the directions (in the xy-plane)
//! to its neighbors within a radius leave a gap wider than a threshold.
//! Gaps are found by sorting neighbor azimuths and scanning consecutive
//! differences, including the wrap-around gap.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::types::{LabeledPointCloud, Point3, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourConfig {
    /// Neighborhood radius in meters.
    pub radius: f64,
    /// Gap threshold in degrees.
    pub angle_threshold: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            radius: 6.0,
            angle_threshold: 90.0,
        }
    }
}

impl ContourConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidConfig("contour radius must be > 0".into()));
        }
        if !(self.angle_threshold > 0.0 && self.angle_threshold < 360.0) {
            return Err(Error::InvalidConfig(
                "contour angle_threshold must lie in (0, 360) degrees".into(),
            ));
        }
        Ok(())
    }
}

/// Spatial index over the xy projections of a fixed point set. Keeps the
/// full 3D points so callers can read back z.
#[derive(Debug, Clone)]
pub struct PlanarIndex {
    points: Vec<Point3>,
    tree: KdTree<2>,
}

pub fn build_index(cloud: &LabeledPointCloud) -> PlanarIndex {
    PlanarIndex::new(cloud.points().to_vec())
}

impl PlanarIndex {
    pub fn new(points: Vec<Point3>) -> Self {
        let tree = KdTree::new(points.iter().map(|p| [p.x, p.y]).collect());
        Self { points, tree }
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

    /// Positions of all indexed points within xy-distance `r` of `q`,
    /// ascending.
    pub fn query_radius(&self, q: &Point3, r: f64) -> Vec<usize> {
        self.tree.within_radius(&[q.x, q.y], r)
    }

    /// Neighbors of the indexed point at `position` within xy-distance `r`.
    /// The point itself is excluded by position, so exact duplicates of it
    /// are still returned.
    pub fn radius_neighbors(&self, position: usize, r: f64) -> Vec<Point3> {
        let p = &self.points[position];
        self.query_radius(p, r)
            .into_iter()
            .filter(|&i| i != position)
            .map(|i| self.points[i])
            .collect()
    }

    /// Position of the xy-nearest indexed point; ties go to the lower
    /// position.
    pub fn nearest(&self, q: Vec2) -> Option<usize> {
        self.tree.nearest(&[q.x, q.y]).map(|(i, _)| i)
    }
}

/// All angular gaps (radians) between consecutive neighbor azimuths around
/// `p`, wrap-around gap last. Neighbors coincident with `p` in xy are
/// ignored; returns `None` when fewer than two directions remain.
pub fn angular_gaps(p: &Point3, neighbors: &[Point3]) -> Option<Vec<f64>> {
    let mut azimuths: Vec<f64> = neighbors
        .iter()
        .filter_map(|n| {
            let v = Vec2::new(n.x - p.x, n.y - p.y);
            (v.x != 0.0 || v.y != 0.0).then(|| v.azimuth())
        })
        .collect();
    if azimuths.len() < 2 {
        return None;
    }
    azimuths.sort_unstable_by(f64::total_cmp);
    let mut gaps: Vec<f64> = azimuths.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.push(azimuths[0] + TAU - azimuths[azimuths.len() - 1]);
    Some(gaps)
}

/// Largest angular gap in degrees, or `None` with fewer than two usable
/// neighbor directions.
pub fn max_angular_gap(p: &Point3, neighbors: &[Point3]) -> Option<f64> {
    let gaps = angular_gaps(p, neighbors)?;
    let widest = gaps.into_iter().fold(0.0, f64::max);
    Some(widest.to_degrees())
}

/// Contour decision for the indexed point at `position`.
///
/// No neighbors: not a contour point. One neighbor: contour point. Otherwise
/// the widest gap must strictly exceed the threshold.
pub fn is_contour_point(position: usize, index: &PlanarIndex, cfg: &ContourConfig) -> bool {
    let p = index.points[position];
    let neighbors: Vec<Point3> = index
        .radius_neighbors(position, cfg.radius)
        .into_iter()
        .filter(|n| n.x != p.x || n.y != p.y)
        .collect();
    match neighbors.len() {
        0 => false,
        1 => true,
        _ => max_angular_gap(&p, &neighbors).is_some_and(|gap| gap > cfg.angle_threshold),
    }
}

/// Contour mask over `samples`, evaluated in parallel.
pub fn contour_mask(samples: &LabeledPointCloud, cfg: &ContourConfig) -> Vec<bool> {
    let index = build_index(samples);
    (0..samples.len())
        .into_par_iter()
        .map(|i| is_contour_point(i, &index, cfg))
        .collect()
}

/// The subset of `samples` on the road boundary, in input order.
pub fn detect_contours(samples: &LabeledPointCloud, cfg: &ContourConfig) -> LabeledPointCloud {
    samples.retain_mask(&contour_mask(samples, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CoordinateFrame, SemanticClass};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at_azimuths(deg: &[f64]) -> Vec<Point3> {
        deg.iter()
            .map(|d| {
                let a = d.to_radians();
                Point3::new(a.cos(), a.sin(), 0.0)
            })
            .collect()
    }

    fn cloud(points: Vec<Point3>) -> LabeledPointCloud {
        LabeledPointCloud::uniform(points, SemanticClass::Road, "t", CoordinateFrame::World)
    }

    fn grid(nx: usize, ny: usize, spacing: f64) -> Vec<Point3> {
        (0..nx)
            .flat_map(|i| {
                (0..ny).map(move |j| Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0))
            })
            .collect()
    }

    /// Independent gap oracle: for each direction, the smallest
    /// counter-clockwise turn to any other direction; the widest such turn
    /// is the widest gap.
    fn oracle_max_gap(p: &Point3, neighbors: &[Point3]) -> f64 {
        let dirs: Vec<f64> = neighbors
            .iter()
            .map(|n| (n.y - p.y).atan2(n.x - p.x).rem_euclid(TAU))
            .collect();
        let mut widest: f64 = 0.0;
        for (i, a) in dirs.iter().enumerate() {
            let mut best = TAU;
            for (j, b) in dirs.iter().enumerate() {
                if i != j {
                    best = best.min((b - a).rem_euclid(TAU));
                }
            }
            widest = widest.max(best);
        }
        widest.to_degrees()
    }

    #[test]
    fn four_axis_neighbors() {
        let got =
            max_angular_gap(&Point3::ORIGIN, &at_azimuths(&[0.0, 90.0, 180.0, 270.0])).unwrap();
        assert!((got - 90.0).abs() < 1e-9);
    }

    #[test]
    fn two_neighbors_wraparound() {
        let got = max_angular_gap(&Point3::ORIGIN, &at_azimuths(&[0.0, 90.0])).unwrap();
        assert!((got - 270.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_directions() {
        assert!(max_angular_gap(&Point3::ORIGIN, &at_azimuths(&[10.0])).is_none());
        assert!(max_angular_gap(
            &Point3::ORIGIN,
            &[Point3::ORIGIN, Point3::new(0.0, 0.0, 5.0)]
        )
        .is_none());
    }

    #[test]
    fn matches_sort_free_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let p = Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                0.0,
            );
            let ns: Vec<Point3> = (0..50)
                .map(|_| {
                    Point3::new(
                        p.x + rng.random_range(-6.0..6.0),
                        p.y + rng.random_range(-6.0..6.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let got = max_angular_gap(&p, &ns).unwrap();
            assert!((got - oracle_max_gap(&p, &ns)).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_neighbors_at_unit_radius() {
        let index = PlanarIndex::new(grid(5, 5, 1.0));
        let centre = 2 * 5 + 2;
        let mut got: Vec<(i64, i64)> = index
            .radius_neighbors(centre, 1.0)
            .iter()
            .map(|p| (p.x as i64, p.y as i64))
            .collect();
        got.sort();
        assert_eq!(got, vec![(1, 2), (2, 1), (2, 3), (3, 2)]);
        assert!(index.radius_neighbors(centre, 0.5).is_empty());
    }

    #[test]
    fn index_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point3> = (0..1000)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        let index = build_index(&cloud(pts.clone()));
        for _ in 0..100 {
            let q = Point3::new(
                rng.random_range(-10.0..110.0),
                rng.random_range(-10.0..110.0),
                0.0,
            );
            let r = rng.random_range(0.1..12.0);
            let brute: Vec<usize> = (0..pts.len())
                .filter(|&i| pts[i].distance_xy(&q) <= r)
                .collect();
            assert_eq!(index.query_radius(&q, r), brute);
            let pos = rng.random_range(0..pts.len());
            let brute_n: Vec<Point3> = (0..pts.len())
                .filter(|&i| i != pos && pts[i].distance_xy(&pts[pos]) <= r)
                .map(|i| pts[i])
                .collect();
            assert_eq!(index.radius_neighbors(pos, r), brute_n);
        }
    }

    #[test]
    fn empty_index_and_zero_radius() {
        let empty = build_index(&cloud(Vec::new()));
        assert!(empty.query_radius(&Point3::ORIGIN, 1e6).is_empty());
        let pts = vec![
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 3.0),
            Point3::new(1.0, 1.5, 0.0),
        ];
        let index = PlanarIndex::new(pts);
        assert_eq!(
            index.query_radius(&Point3::new(1.0, 1.0, 0.0), 0.0),
            vec![0, 1]
        );
    }

    #[test]
    fn decision_rule_cases() {
        let cfg = ContourConfig::default();
        // Interior of a dense grid.
        let pts = grid(21, 21, 1.0);
        let index = PlanarIndex::new(pts);
        assert!(!is_contour_point(10 * 21 + 10, &index, &cfg));
        // Edge of the same grid has a 180° gap.
        assert!(is_contour_point(10 * 21, &index, &cfg));

        // Isolated and single-neighbor points.
        let index = PlanarIndex::new(vec![
            Point3::ORIGIN,
            Point3::new(100.0, 0.0, 0.0),
            Point3::new(101.0, 0.0, 0.0),
        ]);
        assert!(!is_contour_point(0, &index, &cfg));
        assert!(is_contour_point(1, &index, &cfg));

        // Wide fan leaving a 150° gap.
        let mut fan = vec![Point3::ORIGIN];
        fan.extend(at_azimuths(&[
            0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0, 210.0,
        ]));
        let index = PlanarIndex::new(fan);
        assert!(is_contour_point(0, &index, &cfg));
    }

    #[test]
    fn exact_threshold_is_not_contour() {
        let mut pts = vec![Point3::ORIGIN];
        pts.extend(
            at_azimuths(&[0.0, 90.0, 180.0, 270.0])
                .into_iter()
                .map(|p| Point3::new(p.x.round(), p.y.round(), 0.0)),
        );
        let index = PlanarIndex::new(pts);
        let cfg = ContourConfig {
            radius: 2.0,
            angle_threshold: 90.0,
        };
        assert!(!is_contour_point(0, &index, &cfg));
    }

    #[test]
    fn coincident_neighbors_reduce_to_single_neighbor_rule() {
        let pts = vec![
            Point3::ORIGIN,
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 0.0, 0.0),
        ];
        let index = PlanarIndex::new(pts);
        assert!(is_contour_point(0, &index, &ContourConfig::default()));
    }

    #[test]
    fn grid_boundary_band_is_detected() {
        let pts = grid(100, 10, 1.0);
        let cfg = ContourConfig {
            radius: 2.0,
            angle_threshold: 90.0,
        };
        let mask = contour_mask(&cloud(pts.clone()), &cfg);
        for (p, &m) in pts.iter().zip(&mask) {
            let on_edge = p.x == 0.0 || p.x == 99.0 || p.y == 0.0 || p.y == 9.0;
            assert_eq!(m, on_edge, "{p:?}");
        }
        assert!(detect_contours(&cloud(Vec::new()), &cfg).is_empty());
    }

    proptest! {
        #[test]
        fn gaps_sum_to_full_turn(dirs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..60)) {
            let ns: Vec<Point3> = dirs.iter().map(|&(x, y)| Point3::new(x, y, 0.0)).collect();
            if let Some(gaps) = angular_gaps(&Point3::ORIGIN, &ns) {
                prop_assert!(gaps.iter().all(|&g| g >= 0.0));
                prop_assert!((gaps.iter().sum::<f64>().to_degrees() - 360.0).abs() < 1e-9);
            }
        }

        #[test]
        fn gap_invariant_under_rotation_and_scale(
            dirs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..40),
            theta in 0.0f64..TAU,
            scale in 0.1f64..20.0,
            px in -100.0f64..100.0,
            py in -100.0f64..100.0,
        ) {
            let p = Point3::new(px, py, 0.0);
            let ns: Vec<Point3> = dirs.iter().map(|&(x, y)| Point3::new(px + x, py + y, 0.0)).collect();
            let Some(base) = max_angular_gap(&p, &ns) else { return Ok(()) };
            let (s, c) = theta.sin_cos();
            let rot = |q: &Point3| Point3::new(c * q.x - s * q.y, s * q.x + c * q.y, q.z);
            let rotated = max_angular_gap(&rot(&p), &ns.iter().map(rot).collect::<Vec<_>>()).unwrap();
            prop_assert!((base - rotated).abs() < 1e-9, "{} vs {}", base, rotated);
            let sc = |q: &Point3| Point3::new(q.x * scale, q.y * scale, q.z);
            let scaled = max_angular_gap(&sc(&p), &ns.iter().map(sc).collect::<Vec<_>>()).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }

        #[test]
        fn larger_threshold_gives_subset(seed in 0u64..1000, t1 in 10.0f64..300.0, dt in 0.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point3> = (0..150)
                .map(|_| Point3::new(rng.random_range(0.0..30.0), rng.random_range(0.0..8.0), 0.0))
                .collect();
            let c = cloud(pts);
            let a = contour_mask(&c, &ContourConfig { radius: 3.0, angle_threshold: t1 });
            let b = contour_mask(&c, &ContourConfig { radius: 3.0, angle_threshold: (t1 + dt).min(359.0) });
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(!*y || *x);
            }
        }
    }
}
