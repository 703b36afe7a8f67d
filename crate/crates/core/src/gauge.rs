//! Clearance gauge: contour ordering into rings, planar membership, and
//! vegetation classification against the extruded volume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::PlanarIndex;
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::types::{LabeledPointCloud, Point3, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaugeConfig {
    /// Height of the clearance volume above local street level, meters.
    pub clearance_height: f64,
    /// How far below the local street level a point may sit and still count.
    pub ground_slack: f64,
    /// A chain step longer than this multiple of the median nearest-neighbor
    /// distance closes the current ring. Infinity disables splitting.
    pub ring_split_factor: f64,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        Self {
            clearance_height: 4.0,
            ground_slack: 0.2,
            ring_split_factor: 3.0,
        }
    }
}

impl GaugeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clearance_height > 0.0) {
            return Err(Error::InvalidConfig("clearance_height must be > 0".into()));
        }
        if !(self.ground_slack >= 0.0) {
            return Err(Error::InvalidConfig("ground_slack must be >= 0".into()));
        }
        if !(self.ring_split_factor > 0.0) {
            return Err(Error::InvalidConfig("ring_split_factor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingVertex {
    pub xy: Vec2,
    pub z: f64,
    /// Position of the vertex in the contour cloud it came from.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContourPolygon {
    pub rings: Vec<Vec<RingVertex>>,
    /// Chain step length above which a ring was closed.
    pub split_distance: f64,
    /// Contour points left out because their ring had fewer than 3 vertices.
    pub discarded: Vec<usize>,
}

impl ContourPolygon {
    pub fn is_empty(&self) -> bool {
        self.rings.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.rings.iter().map(Vec::len).sum()
    }

    pub fn ring_xy(&self, ring: usize) -> Vec<Vec2> {
        self.rings[ring].iter().map(|v| v.xy).collect()
    }

    /// Indices of rings whose edges (closing edge included) cross each other.
    pub fn self_intersecting_rings(&self) -> Vec<usize> {
        (0..self.rings.len())
            .filter(|&r| ring_self_intersects(&self.ring_xy(r)))
            .collect()
    }
}

fn lexicographic_min(points: &[Point3], visited: &[bool]) -> Option<usize> {
    (0..points.len()).filter(|&i| !visited[i]).min_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
            .then(a.cmp(&b))
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median over points of the xy-distance to the nearest other point.
pub fn median_nearest_distance(points: &[Point3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let tree = KdTree::new(points.iter().map(|p| [p.x, p.y]).collect());
    let nn: Vec<f64> = (0..points.len())
        .map(|i| tree.nearest_k(tree.point(i), 1, Some(i))[0].1)
        .collect();
    median(nn)
}

/// Chains contour points into rings by repeatedly stepping to the nearest
/// unvisited point, starting from the lowest `(x, y)`. A step longer than
/// `ring_split_factor` × the median nearest-neighbor distance starts a new
/// ring. Rings with fewer than 3 vertices are dropped and reported in
/// `discarded`.
pub fn order_contour(contour: &LabeledPointCloud, cfg: &GaugeConfig) -> ContourPolygon {
    let points = contour.points();
    let n = points.len();
    if n < 3 {
        log::warn!("only {n} contour point(s); no polygon can be formed");
        return ContourPolygon {
            rings: Vec::new(),
            split_distance: f64::INFINITY,
            discarded: (0..n).collect(),
        };
    }

    let split_distance = cfg.ring_split_factor * median_nearest_distance(points);
    let mut visited = vec![false; n];
    let mut chains: Vec<Vec<usize>> = Vec::new();

    while let Some(start) = lexicographic_min(points, &visited) {
        let mut chain = vec![start];
        visited[start] = true;
        let mut current = start;
        loop {
            let mut best: Option<(usize, f64)> = None;
            for (j, q) in points.iter().enumerate() {
                if visited[j] {
                    continue;
                }
                let d = points[current].distance_xy(q);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            match best {
                Some((j, d)) if d <= split_distance => {
                    visited[j] = true;
                    chain.push(j);
                    current = j;
                }
                _ => break,
            }
        }
        chains.push(chain);
    }

    let mut rings = Vec::new();
    let mut discarded = Vec::new();
    for chain in chains {
        if chain.len() < 3 {
            discarded.extend(chain);
            continue;
        }
        rings.push(
            chain
                .into_iter()
                .map(|i| RingVertex {
                    xy: points[i].xy(),
                    z: points[i].z,
                    source: i,
                })
                .collect(),
        );
    }
    discarded.sort_unstable();
    if !discarded.is_empty() {
        log::warn!(
            "{} contour point(s) left in rings of fewer than 3 vertices",
            discarded.len()
        );
    }
    ContourPolygon {
        rings,
        split_distance,
        discarded,
    }
}

fn on_segment(a: Vec2, b: Vec2, q: Vec2) -> bool {
    (b - a).cross(q - a) == 0.0
        && q.x >= a.x.min(b.x)
        && q.x <= a.x.max(b.x)
        && q.y >= a.y.min(b.y)
        && q.y <= a.y.max(b.y)
}

/// Even-odd ray casting against one closed ring; points on an edge or
/// vertex count as inside.
pub fn point_in_ring(ring: &[Vec2], q: Vec2) -> bool {
    let n = ring.len();
    if n == 0 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[j], ring[i]);
        if on_segment(a, b, q) {
            return true;
        }
        if (a.y > q.y) != (b.y > q.y) {
            let x_cross = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if q.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// True when `q` lies inside (or on the boundary of) any ring.
pub fn point_in_polygon(polygon: &ContourPolygon, q: Vec2) -> bool {
    polygon.rings.iter().any(|ring| {
        let xy: Vec<Vec2> = ring.iter().map(|v| v.xy).collect();
        point_in_ring(&xy, q)
    })
}

fn orientation(a: Vec2, b: Vec2, c: Vec2) -> i8 {
    let v = (b - a).cross(c - a);
    (v > 0.0) as i8 - (v < 0.0) as i8
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let (o1, o2) = (orientation(p1, p2, q1), orientation(p1, p2, q2));
    let (o3, o4) = (orientation(q1, q2, p1), orientation(q1, q2, p2));
    if o1 != o2 && o3 != o4 {
        return true;
    }
    (o1 == 0 && on_segment(p1, p2, q1))
        || (o2 == 0 && on_segment(p1, p2, q2))
        || (o3 == 0 && on_segment(q1, q2, p1))
        || (o4 == 0 && on_segment(q1, q2, p2))
}

/// Whether any two non-adjacent edges of the closed ring touch.
pub fn ring_self_intersects(ring: &[Vec2]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a1, a2, ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Street level under `q`: z of the xy-nearest road sample.
pub fn ground_height_at(road_samples: &PlanarIndex, q: Vec2) -> Option<f64> {
    road_samples.nearest(q).map(|i| road_samples.points()[i].z)
}

/// Precomputed ring data for bulk membership queries.
struct PreparedRing {
    xy: Vec<Vec2>,
    lo: Vec2,
    hi: Vec2,
}

impl PreparedRing {
    fn new(ring: &[RingVertex]) -> Self {
        let xy: Vec<Vec2> = ring.iter().map(|v| v.xy).collect();
        let lo = xy
            .iter()
            .fold(Vec2::new(f64::INFINITY, f64::INFINITY), |m, p| {
                Vec2::new(m.x.min(p.x), m.y.min(p.y))
            });
        let hi = xy
            .iter()
            .fold(Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |m, p| {
                Vec2::new(m.x.max(p.x), m.y.max(p.y))
            });
        Self { xy, lo, hi }
    }

    fn contains(&self, q: Vec2) -> bool {
        q.x >= self.lo.x
            && q.x <= self.hi.x
            && q.y >= self.lo.y
            && q.y <= self.hi.y
            && point_in_ring(&self.xy, q)
    }
}

/// Splits vegetation into points inside the clearance volume and the rest.
///
/// A point is inside when its xy lies in the polygon and its height above
/// the local street level is within `[-ground_slack, clearance_height]`.
/// Both halves keep input order.
pub fn classify_vegetation_inliers(
    vegetation: &LabeledPointCloud,
    polygon: &ContourPolygon,
    road_samples: &PlanarIndex,
    cfg: &GaugeConfig,
) -> Result<(LabeledPointCloud, LabeledPointCloud)> {
    if road_samples.is_empty() {
        return Err(Error::NoRoadPoints);
    }
    let rings: Vec<PreparedRing> = polygon.rings.iter().map(|r| PreparedRing::new(r)).collect();
    let mask: Vec<bool> = vegetation
        .points()
        .par_iter()
        .map(|p| {
            let q = p.xy();
            if !rings.iter().any(|r| r.contains(q)) {
                return false;
            }
            let ground = ground_height_at(road_samples, q).expect("index is non-empty");
            let h = p.z - ground;
            h >= -cfg.ground_slack && h <= cfg.clearance_height
        })
        .collect();
    let outlier_mask: Vec<bool> = mask.iter().map(|m| !m).collect();
    Ok((
        vegetation.retain_mask(&mask),
        vegetation.retain_mask(&outlier_mask),
    ))
}
