use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::{ClusterAssignment, ClusterError};
use crate::hungarian::max_weight_assignment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringMetrics {
    pub nmi: f64,
    pub ari: f64,
    pub accuracy: f64,
}

/// Contingency table: rows are `pred` groups, columns `gold` groups, both in
/// order of first appearance.
pub fn contingency<A: Eq + Hash, B: Eq + Hash>(pred: &[A], gold: &[B]) -> Vec<Vec<usize>> {
    fn index<T: Eq + Hash>(v: &[T]) -> (Vec<usize>, usize) {
        let mut map: HashMap<&T, usize> = HashMap::new();
        let idx = v
            .iter()
            .map(|x| {
                let next = map.len();
                *map.entry(x).or_insert(next)
            })
            .collect();
        (idx, map.len())
    }
    let (p, kp) = index(pred);
    let (g, kg) = index(gold);
    let mut table = vec![vec![0usize; kg]; kp];
    for (a, b) in p.into_iter().zip(g) {
        table[a][b] += 1;
    }
    table
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI (geometric normalization, natural log), ARI, and Hungarian-matched
/// accuracy of `pred` against `gold`. Both slices must be the same length.
pub fn clustering_scores<A: Eq + Hash, B: Eq + Hash>(pred: &[A], gold: &[B]) -> ClusteringMetrics {
    assert_eq!(pred.len(), gold.len(), "pred and gold differ in length");
    let n = pred.len();
    if n == 0 {
        return ClusteringMetrics {
            nmi: 0.0,
            ari: 0.0,
            accuracy: 0.0,
        };
    }
    let table = contingency(pred, gold);
    let nf = n as f64;
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();

    let (hu, hv) = (entropy(&rows, nf), entropy(&cols, nf));
    let nmi = if hu == 0.0 && hv == 0.0 {
        1.0
    } else if hu == 0.0 || hv == 0.0 {
        0.0
    } else {
        let mut mi = 0.0;
        for (i, r) in table.iter().enumerate() {
            for (j, &c) in r.iter().enumerate() {
                if c > 0 {
                    let c = c as f64;
                    mi += c / nf * (c * nf / (rows[i] as f64 * cols[j] as f64)).ln();
                }
            }
        }
        (mi / (hu * hv).sqrt()).clamp(0.0, 1.0)
    };

    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { a * b / total } else { 0.0 };
    let max_index = 0.5 * (a + b);
    let ari = if max_index == expected {
        // both partitions trivial and identical (all one cluster or all singletons)
        1.0
    } else {
        (index - expected) / (max_index - expected)
    };

    let weights: Vec<Vec<f64>> = table
        .iter()
        .map(|r| r.iter().map(|&c| c as f64).collect())
        .collect();
    let (_, matched) = max_weight_assignment(&weights);
    let accuracy = matched / nf;

    ClusteringMetrics { nmi, ari, accuracy }
}

/// Score an assignment against gold labels keyed by id.
pub fn clustering_metrics<S: AsRef<str>>(
    assignment: &ClusterAssignment,
    gold: &HashMap<String, S>,
) -> Result<ClusteringMetrics, ClusterError> {
    let gold_labels = assignment
        .ids
        .iter()
        .map(|id| {
            gold.get(id)
                .map(AsRef::as_ref)
                .ok_or_else(|| ClusterError::MissingGold(id.clone()))
        })
        .collect::<Result<Vec<&str>, _>>()?;
    Ok(clustering_scores(&assignment.labels, &gold_labels))
}
