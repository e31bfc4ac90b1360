use super::{cluster_means, sse, ClusterAssignment, ClusterError, ClusteringConfig, Linkage};
use crate::embedding::EmbeddingMatrix;
use crate::linalg::dist;

/// Bottom-up merging on Euclidean distance until `k` clusters remain.
///
/// Cluster distances are maintained with the Lance-Williams update for the
/// configured linkage. Each cluster lives in the slot of its smallest member,
/// and ties between equally close pairs go to the smallest `(i, j)` slot
/// pair. O(n³) time, O(n²) memory.
pub fn agglomerative(x: &EmbeddingMatrix, config: &ClusteringConfig) -> Result<ClusterAssignment, ClusterError> {
    let k = config.fixed_k()?;
    let n = x.len();
    if n < k {
        return Err(ClusterError::TooFewPoints { n, k });
    }
    let rows = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(&rows[i], &rows[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut active: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut merges = 0;

    for _ in 0..n - k {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let v = d[i * n + j];
                if best.is_none_or(|(_, _, b)| v < b) {
                    best = Some((i, j, v));
                }
            }
        }
        let (i, j, _) = best.expect("more than k active clusters");
        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let (dim, djm) = (d[i * n + m], d[j * n + m]);
            let v = match config.linkage {
                Linkage::Single => dim.min(djm),
                Linkage::Complete => dim.max(djm),
                Linkage::Average => {
                    (size[i] as f64 * dim + size[j] as f64 * djm) / (size[i] + size[j]) as f64
                }
            };
            d[i * n + m] = v;
            d[m * n + i] = v;
        }
        size[i] += size[j];
        active[j] = false;
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
        merges += 1;
    }

    // number clusters by their smallest member
    let slots: Vec<usize> = (0..n).filter(|&s| active[s]).collect();
    let mut slot_to_cluster = vec![usize::MAX; n];
    for (c, &s) in slots.iter().enumerate() {
        slot_to_cluster[s] = c;
    }
    let labels: Vec<usize> = owner.iter().map(|&s| slot_to_cluster[s]).collect();
    let centroids = cluster_means(rows, &labels, slots.len(), x.dim());
    let objective = sse(rows, &labels, &centroids);
    Ok(ClusterAssignment {
        ids: x.ids().to_vec(),
        labels,
        k_effective: slots.len(),
        centroids,
        objective,
        iterations: merges,
        seed_used: config.seed,
        trace: vec![objective],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_points(v.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    fn cfg(k: usize, linkage: Linkage) -> ClusteringConfig {
        let mut c = ClusteringConfig::default().with_k(k);
        c.linkage = linkage;
        c
    }

    #[test]
    fn average_linkage_merges_closest_first() {
        let a = agglomerative(&pts(&[0.0, 1.0, 10.0]), &cfg(2, Linkage::Average)).unwrap();
        assert_eq!(a.labels, [0, 0, 1]);
        assert_eq!(a.iterations, 1);
    }

    #[test]
    fn no_merges_and_full_merge() {
        let x = pts(&[3.0, 1.0, 2.0]);
        assert_eq!(agglomerative(&x, &cfg(3, Linkage::Single)).unwrap().labels, [0, 1, 2]);
        let all = agglomerative(&x, &cfg(1, Linkage::Complete)).unwrap();
        assert_eq!(all.labels, [0, 0, 0]);
        assert_eq!(all.centroids, [vec![2.0]]);
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        // (0,1) and (1,2) are both at distance 1: (0,1) merges first
        let a = agglomerative(&pts(&[0.0, 1.0, 2.0]), &cfg(2, Linkage::Single)).unwrap();
        assert_eq!(a.labels, [0, 0, 1]);
    }

    #[test]
    fn linkages_differ_on_chain() {
        // single linkage chains 0-1-2-3 together before joining the pair at 9, 9.5
        let x = pts(&[0.0, 2.0, 4.0, 6.0, 9.0, 9.5]);
        let single = agglomerative(&x, &cfg(2, Linkage::Single)).unwrap();
        assert_eq!(single.labels, [0, 0, 0, 0, 1, 1]);
        let complete = agglomerative(&x, &cfg(2, Linkage::Complete)).unwrap();
        assert_eq!(complete.labels, [0, 0, 1, 1, 1, 1]);
    }
}
