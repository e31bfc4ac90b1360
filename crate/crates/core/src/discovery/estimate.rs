use serde::{Deserialize, Serialize};

use super::{kmeans, ClusterAssignment, ClusterError, ClusteringConfig};
use crate::embedding::EmbeddingMatrix;
use crate::linalg::{dist, sq_dist};

/// How the final count is picked once small clusters have been dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KSelection {
    /// Report the number of surviving clusters directly.
    Survivors,
    /// Search `2..=survivors` for the k-means solution with the highest
    /// simplified silhouette.
    Silhouette,
    /// Merge the surviving centroids with size-weighted average linkage and
    /// cut the dendrogram at the largest jump between consecutive merge
    /// heights.
    MergeGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateKConfig {
    pub k_max: usize,
    /// Clusters smaller than `threshold · n / k_max` are dropped.
    pub threshold: f64,
    pub selection: KSelection,
}

impl Default for EstimateKConfig {
    fn default() -> Self {
        Self {
            k_max: 20,
            threshold: 0.5,
            selection: KSelection::MergeGap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub k: usize,
    /// Clusters of the over-clustered run that passed the size cut.
    pub survivors: usize,
    /// `(k, score)` for every candidate tried in silhouette selection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub silhouettes: Vec<(usize, f64)>,
    /// Dendrogram merge heights in merge-gap selection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merge_heights: Vec<f64>,
}

/// Average-linkage merges over weighted points, in order: `(kept, absorbed,
/// height)` by starting index. Weighted average linkage is monotone, so the
/// heights are non-decreasing.
pub fn merges(points: &[Vec<f64>], weights: &[usize]) -> Vec<(usize, usize, f64)> {
    let m = points.len();
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            d[i][j] = dist(&points[i], &points[j]);
            d[j][i] = d[i][j];
        }
    }
    let mut w: Vec<f64> = weights.iter().map(|&x| x as f64).collect();
    let mut active = vec![true; m];
    let mut out = Vec::with_capacity(m.saturating_sub(1));
    for _ in 1..m {
        let mut best = (0, 0, f64::INFINITY);
        for i in 0..m {
            for j in i + 1..m {
                if active[i] && active[j] && d[i][j] < best.2 {
                    best = (i, j, d[i][j]);
                }
            }
        }
        let (i, j, h) = best;
        out.push((i, j, h));
        for c in 0..m {
            if active[c] && c != i && c != j {
                let v = (w[i] * d[i][c] + w[j] * d[j][c]) / (w[i] + w[j]);
                d[i][c] = v;
                d[c][i] = v;
            }
        }
        w[i] += w[j];
        active[j] = false;
    }
    out
}

/// Total weight of each group left after applying the first `steps` merges.
pub fn group_weights(weights: &[usize], merges: &[(usize, usize, f64)], steps: usize) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut active = vec![true; w.len()];
    for &(i, j, _) in &merges[..steps] {
        w[i] += w[j];
        active[j] = false;
    }
    w.into_iter().zip(active).filter(|(_, a)| *a).map(|(x, _)| x).collect()
}

/// Cluster count just before the largest jump between consecutive merge
/// heights. With `m` starting groups this lies in `2..m`; `m ≤ 2` returns `m`.
pub fn largest_gap_k(heights: &[f64]) -> usize {
    let m = heights.len() + 1;
    if m <= 2 {
        return m;
    }
    let mut best = (1, f64::NEG_INFINITY);
    for j in 1..heights.len() {
        let gap = heights[j] - heights[j - 1];
        if gap > best.1 {
            best = (j, gap);
        }
    }
    m - best.0
}

/// Mean simplified silhouette: each point compares the distance to its own
/// centroid with the distance to the nearest other centroid. Points in
/// singleton clusters score 0.
pub fn simplified_silhouette(x: &EmbeddingMatrix, a: &ClusterAssignment) -> f64 {
    if a.k_effective < 2 || x.is_empty() {
        return 0.0;
    }
    let sizes = a.sizes();
    let total: f64 = x
        .rows()
        .iter()
        .zip(&a.labels)
        .map(|(r, &l)| {
            if sizes[l] < 2 {
                return 0.0;
            }
            let own = dist(r, &a.centroids[l]);
            let other = a
                .centroids
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != l)
                .map(|(_, c)| sq_dist(r, c))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            let denom = own.max(other);
            if denom == 0.0 {
                0.0
            } else {
                (other - own) / denom
            }
        })
        .sum();
    total / x.len() as f64
}

/// Estimate the number of clusters: over-cluster with k-means at `k_max`,
/// drop clusters smaller than `threshold · n / k_max`, then select k. Merge-gap
/// mode cuts the merge tree of the survivors at its largest gap and counts
/// the resulting groups of weight at least `threshold · n / k_cut`; silhouette
/// mode chooses the best-separated k-means solution among `2..=survivors`.
/// Always returns at least 1.
pub fn estimate_k(
    x: &EmbeddingMatrix,
    estimate: &EstimateKConfig,
    base: &ClusteringConfig,
) -> Result<KEstimate, ClusterError> {
    let n = x.len();
    if estimate.k_max == 0 {
        return Err(ClusterError::ZeroK);
    }
    if estimate.k_max > n {
        return Err(ClusterError::TooFewPoints { n, k: estimate.k_max });
    }
    let over = kmeans(x, &base.with_k(estimate.k_max))?;
    let cut = estimate.threshold * n as f64 / estimate.k_max as f64;
    let sizes = over.sizes();
    let kept: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] as f64 >= cut).collect();
    let survivors = kept.len().max(1);

    let mut silhouettes = Vec::new();
    let mut heights = Vec::new();
    let k = match estimate.selection {
        KSelection::Survivors => survivors,
        KSelection::MergeGap => {
            let points: Vec<Vec<f64>> = kept.iter().map(|&c| over.centroids[c].clone()).collect();
            let weights: Vec<usize> = kept.iter().map(|&c| sizes[c]).collect();
            let tree = merges(&points, &weights);
            heights = tree.iter().map(|&(_, _, h)| h).collect();
            let k_cut = largest_gap_k(&heights).max(1);
            let groups = group_weights(&weights, &tree, weights.len() - k_cut);
            let total: usize = weights.iter().sum();
            let minor = estimate.threshold * total as f64 / k_cut as f64;
            groups.iter().filter(|&&g| g as f64 >= minor).count().max(1)
        }
        KSelection::Silhouette if survivors < 2 => 1,
        KSelection::Silhouette => {
            let mut best = (1, f64::NEG_INFINITY);
            for k in 2..=survivors {
                let a = kmeans(x, &base.with_k(k))?;
                let s = simplified_silhouette(x, &a);
                silhouettes.push((k, s));
                if s > best.1 {
                    best = (k, s);
                }
            }
            best.0
        }
    };
    Ok(KEstimate {
        k,
        survivors,
        silhouettes,
        merge_heights: heights,
    })
}
