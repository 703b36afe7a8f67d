//! Class filtering, statistical outlier removal and Poisson-disk
//! downsampling of the road cloud.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::types::{LabeledPointCloud, SemanticClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    pub k_neighbors: usize,
    pub std_ratio: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            std_ratio: 2.0,
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::InvalidConfig(
                "outlier k_neighbors must be >= 1".into(),
            ));
        }
        if !(self.std_ratio > 0.0) {
            return Err(Error::InvalidConfig("outlier std_ratio must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub target_count: usize,
    pub elimination_exponent: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            target_count: 1000,
            elimination_exponent: 8.0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_count == 0 {
            return Err(Error::InvalidConfig(
                "sampling target_count must be >= 1".into(),
            ));
        }
        if !(self.elimination_exponent > 0.0) {
            return Err(Error::InvalidConfig(
                "sampling elimination_exponent must be > 0".into(),
            ));
        }
        Ok(())
    }
}

pub fn filter_class(cloud: &LabeledPointCloud, class: SemanticClass) -> LabeledPointCloud {
    let mask: Vec<bool> = cloud.classes().iter().map(|&c| c == class).collect();
    cloud.retain_mask(&mask)
}

/// Mean distance from each point to its `k` nearest neighbors (3D, self
/// excluded by index).
pub fn mean_knn_distances(cloud: &LabeledPointCloud, k: usize) -> Vec<f64> {
    let tree = KdTree::new(cloud.points().iter().map(|p| p.to_array()).collect());
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nn = tree.nearest_k(tree.point(i), k, Some(i));
            nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len().max(1) as f64
        })
        .collect()
}

/// Drops points whose mean k-NN distance exceeds `mean + std_ratio · std`
/// of all such means. Clouds with `<= k` points are returned unchanged.
pub fn remove_statistical_outliers(
    cloud: &LabeledPointCloud,
    cfg: &OutlierConfig,
) -> LabeledPointCloud {
    if cloud.len() <= cfg.k_neighbors {
        return cloud.clone();
    }
    let means = mean_knn_distances(cloud, cfg.k_neighbors);
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    let threshold = mean + cfg.std_ratio * var.sqrt();
    let mask: Vec<bool> = means.iter().map(|&m| m <= threshold).collect();
    cloud.retain_mask(&mask)
}

/// Poisson-disk radius for `target` samples spread over `area` m² of plane.
pub fn max_poisson_radius(area: f64, target: usize) -> f64 {
    (area / (2.0 * 3f64.sqrt() * target as f64)).sqrt()
}

/// `r_max` for downsampling `points` to `target`, from the xy bounding box.
/// A degenerate (zero-area) box falls back to spacing along its longest
/// side.
pub fn sampling_radius(cloud: &LabeledPointCloud, target: usize) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in cloud.points() {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    if cloud.is_empty() {
        return 0.0;
    }
    let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
    let area = w * h;
    if area > 0.0 {
        max_poisson_radius(area, target)
    } else {
        w.max(h) / (2.0 * target as f64)
    }
}

/// Max-heap over point ids keyed by an external weight slice, supporting
/// in-place key decrease. Equal weights order by larger id first.
struct EliminationHeap {
    heap: Vec<usize>,
    pos: Vec<usize>,
}

impl EliminationHeap {
    const ABSENT: usize = usize::MAX;

    fn new(n: usize, weights: &[f64]) -> Self {
        let mut h = Self {
            heap: (0..n).collect(),
            pos: (0..n).collect(),
        };
        for i in (0..n / 2).rev() {
            h.sift_down(i, weights);
        }
        h
    }

    fn above(a: usize, b: usize, w: &[f64]) -> bool {
        match w[a].total_cmp(&w[b]) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => a > b,
        }
    }

    fn swap(&mut self, i: usize, j: usize) {
        self.heap.swap(i, j);
        self.pos[self.heap[i]] = i;
        self.pos[self.heap[j]] = j;
    }

    fn sift_down(&mut self, mut i: usize, w: &[f64]) {
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut top = i;
            if l < self.heap.len() && Self::above(self.heap[l], self.heap[top], w) {
                top = l;
            }
            if r < self.heap.len() && Self::above(self.heap[r], self.heap[top], w) {
                top = r;
            }
            if top == i {
                return;
            }
            self.swap(i, top);
            i = top;
        }
    }

    fn pop(&mut self, w: &[f64]) -> Option<usize> {
        let top = *self.heap.first()?;
        let last = self.heap.len() - 1;
        self.swap(0, last);
        self.heap.pop();
        self.pos[top] = Self::ABSENT;
        if !self.heap.is_empty() {
            self.sift_down(0, w);
        }
        Some(top)
    }

    /// Restores heap order after `w[id]` decreased.
    fn decreased(&mut self, id: usize, w: &[f64]) {
        let p = self.pos[id];
        if p != Self::ABSENT {
            self.sift_down(p, w);
        }
    }
}

/// Weighted sample elimination to exactly `min(target, n)` points.
///
/// Each point is weighted by `Σ (1 − d/2r)^α` over neighbors with planar
/// distance `d < 2r`, `r = r_max`. The heaviest point is removed and its
/// neighbors' weights reduced until the target count remains. Survivors keep
/// their input order.
pub fn poisson_downsample(cloud: &LabeledPointCloud, cfg: &SamplingConfig) -> LabeledPointCloud {
    let n = cloud.len();
    let target = cfg.target_count;
    if n <= target {
        return cloud.clone();
    }
    let radius = 2.0 * sampling_radius(cloud, target);
    let alpha = cfg.elimination_exponent;
    let weight = |d_sq: f64| -> f64 {
        let d = d_sq.sqrt();
        if d < radius {
            (1.0 - d / radius).powf(alpha)
        } else {
            0.0
        }
    };

    let tree = KdTree::new(cloud.points().iter().map(|p| [p.x, p.y]).collect());
    let mut weights: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut w = 0.0;
            tree.for_each_within(tree.point(i), radius, |j, d_sq| {
                if j != i {
                    w += weight(d_sq);
                }
            });
            w
        })
        .collect();

    let mut alive = vec![true; n];
    let mut heap = EliminationHeap::new(n, &weights);
    let mut remaining = n;
    let mut touched = Vec::new();
    while remaining > target {
        let Some(i) = heap.pop(&weights) else { break };
        alive[i] = false;
        remaining -= 1;
        touched.clear();
        tree.for_each_within(tree.point(i), radius, |j, d_sq| {
            if alive[j] {
                touched.push((j, d_sq));
            }
        });
        // Apply updates in index order so results never depend on traversal.
        touched.sort_unstable_by_key(|&(j, _)| j);
        for &(j, d_sq) in &touched {
            weights[j] -= weight(d_sq);
            heap.decreased(j, &weights);
        }
    }
    cloud.retain_mask(&alive)
}
