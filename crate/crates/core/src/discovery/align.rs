use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ClusterAssignment, ClusterError};
use crate::hungarian::max_weight_assignment;

/// Relabeling of a current clustering onto a previous one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// `permutation[c]` is the previous-round index for current cluster `c`.
    pub permutation: Vec<usize>,
    /// Points whose previous cluster equals their permuted current cluster.
    pub overlap: usize,
}

impl AlignmentMap {
    /// `curr` with labels and centroids renumbered into the previous indices.
    pub fn apply(&self, curr: &ClusterAssignment) -> ClusterAssignment {
        let mut out = curr.clone();
        out.labels = curr.labels.iter().map(|&l| self.permutation[l]).collect();
        let mut centroids = curr.centroids.clone();
        for (c, &p) in self.permutation.iter().enumerate() {
            centroids[p] = curr.centroids[c].clone();
        }
        out.centroids = centroids;
        out
    }
}

/// Permutation of `curr`'s cluster indices that maximizes agreement with
/// `prev`, found by the Hungarian method on the k×k contingency table.
pub fn align_assignments(
    prev: &ClusterAssignment,
    curr: &ClusterAssignment,
) -> Result<AlignmentMap, ClusterError> {
    if prev.k_effective != curr.k_effective {
        return Err(ClusterError::KMismatch {
            prev: prev.k_effective,
            curr: curr.k_effective,
        });
    }
    if prev.ids.len() != curr.ids.len() {
        let extra = prev
            .ids
            .iter()
            .chain(&curr.ids)
            .find(|id| !prev.ids.contains(id) || !curr.ids.contains(id))
            .cloned()
            .unwrap_or_default();
        return Err(ClusterError::IdSetMismatch(extra));
    }
    let k = prev.k_effective;
    let prev_of: HashMap<&str, usize> = prev
        .ids
        .iter()
        .map(String::as_str)
        .zip(prev.labels.iter().copied())
        .collect();
    // table[c][p]: points in current cluster c and previous cluster p
    let mut table = vec![vec![0.0; k]; k];
    for (id, &c) in curr.ids.iter().zip(&curr.labels) {
        let p = *prev_of
            .get(id.as_str())
            .ok_or_else(|| ClusterError::IdSetMismatch(id.clone()))?;
        table[c][p] += 1.0;
    }
    let (rows, total) = max_weight_assignment(&table);
    Ok(AlignmentMap {
        permutation: rows.into_iter().map(|p| p.expect("square table")).collect(),
        overlap: total.round() as usize,
    })
}
