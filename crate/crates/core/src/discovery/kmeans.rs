use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{align_assignments, cluster_means, compact, sse, ClusterAssignment, ClusterError, ClusteringConfig};
use crate::embedding::EmbeddingMatrix;
use crate::linalg::{argmin, sq_dist};

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    sse: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// k-means++ seeding: first centre uniform, later ones with probability
/// proportional to squared distance to the nearest chosen centre.
fn kmeans_pp(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centres = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick].clone();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centres.push(c);
    }
    centres
}

fn assign(rows: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    rows.iter()
        .map(|r| argmin(centroids.iter().map(|c| sq_dist(r, c))).unwrap().0)
        .collect()
}

/// Give every empty cluster the point farthest from its current centroid,
/// taken only from clusters that keep at least one member.
fn repair_empty(rows: &[Vec<f64>], labels: &mut [usize], centroids: &[Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in rows.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(r, &centroids[labels[i]]);
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else { break };
        sizes[labels[i]] -= 1;
        labels[i] = empty;
        sizes[empty] = 1;
    }
}

fn lloyd(rows: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> Run {
    let k = init.len();
    let dim = init[0].len();
    let mut centroids = init;
    let mut labels = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for it in 1..=max_iter.max(1) {
        labels = assign(rows, &centroids);
        repair_empty(rows, &mut labels, &centroids);
        let next = cluster_means(rows, &labels, k, dim);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        trace.push(sse(rows, &labels, &centroids));
        iterations = it;
        if shift < tol {
            break;
        }
    }
    Run {
        sse: *trace.last().unwrap(),
        labels,
        centroids,
        iterations,
        trace,
    }
}

fn finish(x: &EmbeddingMatrix, run: Run, seed_used: u64) -> ClusterAssignment {
    let k = run.centroids.len();
    let (labels, kept) = compact(&run.labels, k);
    ClusterAssignment {
        ids: x.ids().to_vec(),
        labels,
        k_effective: kept.len(),
        centroids: kept.iter().map(|&c| run.centroids[c].clone()).collect(),
        objective: run.sse,
        iterations: run.iterations,
        seed_used,
        trace: run.trace,
    }
}

/// Lloyd's k-means with k-means++ seeding; best of `restarts` runs by SSE
/// (ties to the earlier restart). Restart `i` uses seed `seed + i`.
pub fn kmeans(x: &EmbeddingMatrix, config: &ClusteringConfig) -> Result<ClusterAssignment, ClusterError> {
    let k = config.fixed_k()?;
    let n = x.len();
    if n < k {
        return Err(ClusterError::TooFewPoints { n, k });
    }
    let rows = x.rows();
    let mut best: Option<(Run, u64)> = None;
    for restart in 0..config.restarts {
        let seed = config.seed.wrapping_add(restart as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = kmeans_pp(rows, k, &mut rng);
        let run = lloyd(rows, init, config.max_iter, config.tol);
        if best.as_ref().is_none_or(|(b, _)| run.sse < b.sse) {
            best = Some((run, seed));
        }
    }
    let (run, seed) = best.expect("restarts ≥ 1");
    Ok(finish(x, run, seed))
}

/// One Lloyd run from the given centroids, no restarts.
pub fn kmeans_from(
    x: &EmbeddingMatrix,
    init: &[Vec<f64>],
    config: &ClusteringConfig,
) -> Result<ClusterAssignment, ClusterError> {
    let k = init.len();
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if x.len() < k {
        return Err(ClusterError::TooFewPoints { n: x.len(), k });
    }
    let run = lloyd(x.rows(), init.to_vec(), config.max_iter, config.tol);
    Ok(finish(x, run, config.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub assignment: ClusterAssignment,
    /// Fraction of points whose aligned cluster did not change, per round.
    pub stability: Vec<f64>,
    pub rounds_run: usize,
}

/// Aligned re-clustering: start from k-means, then each round re-run Lloyd
/// from the previous centroids, align the new indices to the previous round
/// with the Hungarian method, and record how many points kept their cluster.
/// Stops early once a round changes nothing.
pub fn refine_clusters(x: &EmbeddingMatrix, config: &ClusteringConfig) -> Result<RefineResult, ClusterError> {
    if config.refine_rounds == 0 {
        return Err(ClusterError::NoRefineRounds);
    }
    let mut prev = kmeans(x, config)?;
    let mut stability = Vec::new();
    for _ in 0..config.refine_rounds {
        let curr = kmeans_from(x, &prev.centroids, config)?;
        let aligned = if curr.k_effective == prev.k_effective {
            align_assignments(&prev, &curr)?.apply(&curr)
        } else {
            curr
        };
        let same = prev
            .labels
            .iter()
            .zip(&aligned.labels)
            .filter(|(a, b)| a == b)
            .count();
        let frac = same as f64 / x.len().max(1) as f64;
        stability.push(frac);
        let unchanged = same == x.len();
        prev = aligned;
        if unchanged {
            break;
        }
    }
    Ok(RefineResult {
        rounds_run: stability.len(),
        assignment: prev,
        stability,
    })
}
