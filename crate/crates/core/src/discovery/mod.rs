//! Intent discovery: cluster UNKNOWN-flagged embeddings, keep cluster
//! indices stable across refinement rounds, estimate the cluster count, and
//! score clusterings against gold labels.

mod agglomerative;
mod align;
mod estimate;
mod gmm;
mod kmeans;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::embedding::EmbeddingMatrix;

pub use agglomerative::agglomerative;
pub use align::{align_assignments, AlignmentMap};
pub use estimate::{estimate_k, group_weights, largest_gap_k, merges, EstimateKConfig, KEstimate, KSelection};
pub use gmm::gmm_em;
pub use kmeans::{kmeans, kmeans_from, refine_clusters, RefineResult};
pub use metrics::{clustering_metrics, clustering_scores, contingency, ClusteringMetrics};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k is AUTO; resolve it with estimate_k first")]
    UnresolvedK,
    #[error("cluster counts differ: {prev} vs {curr}")]
    KMismatch { prev: usize, curr: usize },
    #[error("assignments cover different id sets (first difference {0:?})")]
    IdSetMismatch(String),
    #[error("no gold label for id {0:?}")]
    MissingGold(String),
    #[error("refine_rounds must be at least 1")]
    NoRefineRounds,
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
    #[error("unknown {kind} {value:?}")]
    UnknownVariant { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Gmm,
    Agglomerative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
    Complete,
    Single,
}

impl FromStr for Method {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans" => Ok(Self::Kmeans),
            "gmm" => Ok(Self::Gmm),
            "agglomerative" => Ok(Self::Agglomerative),
            _ => Err(ClusterError::UnknownVariant {
                kind: "method",
                value: s.to_string(),
            }),
        }
    }
}

impl FromStr for Linkage {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Self::Average),
            "complete" => Ok(Self::Complete),
            "single" => Ok(Self::Single),
            _ => Err(ClusterError::UnknownVariant {
                kind: "linkage",
                value: s.to_string(),
            }),
        }
    }
}

/// Requested cluster count: fixed, or estimated from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Auto,
    Fixed(usize),
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KChoice {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) => Err(ClusterError::ZeroK),
            Ok(k) => Ok(Self::Fixed(k)),
            Err(_) => Err(ClusterError::UnknownVariant {
                kind: "k",
                value: s.to_string(),
            }),
        }
    }
}

impl Serialize for KChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("k must be at least 1")),
            Raw::N(k) => Ok(Self::Fixed(k)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub method: Method,
    pub k: KChoice,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub linkage: Linkage,
    pub refine_rounds: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            method: Method::Kmeans,
            k: KChoice::Auto,
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
            linkage: Linkage::Average,
            refine_rounds: 0,
        }
    }
}

impl ClusteringConfig {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = KChoice::Fixed(k);
        self
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k == KChoice::Fixed(0) {
            return Err(ClusterError::ZeroK);
        }
        if self.restarts == 0 {
            return Err(ClusterError::InvalidConfig("restarts must be ≥ 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(ClusterError::InvalidConfig("tol must be > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn fixed_k(&self) -> Result<usize, ClusterError> {
        self.validate()?;
        match self.k {
            KChoice::Fixed(k) => Ok(k),
            KChoice::Auto => Err(ClusterError::UnresolvedK),
        }
    }
}

/// Result of one clustering run. `labels[i]` is the cluster of `ids[i]`;
/// cluster indices are `0..k_effective` with no empty cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub k_effective: usize,
    pub centroids: Vec<Vec<f64>>,
    /// SSE for k-means and agglomerative, log-likelihood for GMM.
    pub objective: f64,
    pub iterations: usize,
    pub seed_used: u64,
    /// Objective after every iteration of the winning run.
    pub trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn assignment(&self) -> BTreeMap<&str, usize> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().copied())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k_effective];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Member ids of each cluster, in input order.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k_effective];
        for (id, &l) in self.ids.iter().zip(&self.labels) {
            out[l].push(id.as_str());
        }
        out
    }

    /// One `{"id": ..., "cluster": n}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            id: &'a str,
            cluster: usize,
        }
        for (id, &cluster) in self.ids.iter().zip(&self.labels) {
            let line = serde_json::to_string(&Line { id, cluster }).map_err(std::io::Error::other)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Run manifest: config echo plus outcome.
    pub fn manifest(&self, config: &ClusteringConfig) -> serde_json::Value {
        serde_json::json!({
            "config": config,
            "k_effective": self.k_effective,
            "objective": self.objective,
            "iterations": self.iterations,
            "seed_used": self.seed_used,
        })
    }
}

/// Run the configured method with a fixed k (AUTO must be resolved first).
/// With `refine_rounds > 0` and k-means, the aligned refinement result is
/// returned.
pub fn cluster(x: &EmbeddingMatrix, config: &ClusteringConfig) -> Result<ClusterAssignment, ClusterError> {
    match config.method {
        Method::Kmeans if config.refine_rounds > 0 => Ok(refine_clusters(x, config)?.assignment),
        Method::Kmeans => kmeans(x, config),
        Method::Gmm => gmm_em(x, config),
        Method::Agglomerative => agglomerative(x, config),
    }
}

/// Renumber labels so clusters are `0..k` in order of first appearance of
/// their original index, dropping empty ones. Returns new labels and the
/// kept original indices.
pub(crate) fn compact(labels: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut used = vec![false; k];
    for &l in labels {
        used[l] = true;
    }
    let kept: Vec<usize> = (0..k).filter(|&c| used[c]).collect();
    let mut remap = vec![usize::MAX; k];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    (labels.iter().map(|&l| remap[l]).collect(), kept)
}

pub(crate) fn sse(rows: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(r, &l)| crate::linalg::sq_dist(r, &centroids[l]))
        .sum()
}

pub(crate) fn cluster_means(rows: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(r) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_choice_parse_and_serde() {
        assert_eq!("auto".parse::<KChoice>().unwrap(), KChoice::Auto);
        assert_eq!("4".parse::<KChoice>().unwrap(), KChoice::Fixed(4));
        assert_eq!("0".parse::<KChoice>(), Err(ClusterError::ZeroK));
        let cfg = ClusteringConfig::default().with_k(3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"k\":3"));
        let back: ClusteringConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let auto: ClusteringConfig = serde_json::from_str(r#"{"k":"auto"}"#).unwrap();
        assert_eq!(auto.k, KChoice::Auto);
        assert_eq!(auto.max_iter, 300);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ClusteringConfig::default().with_k(2);
        cfg.restarts = 0;
        assert!(cfg.validate().is_err());
        cfg.restarts = 1;
        cfg.tol = 0.0;
        assert!(cfg.validate().is_err());
        assert_eq!(ClusteringConfig::default().fixed_k(), Err(ClusterError::UnresolvedK));
    }

    #[test]
    fn compact_drops_empty() {
        let (labels, kept) = compact(&[2, 0, 2, 4], 5);
        assert_eq!(labels, [1, 0, 1, 2]);
        assert_eq!(kept, [0, 2, 4]);
    }

    #[test]
    fn export_format() {
        let a = ClusterAssignment {
            ids: vec!["u1".into(), "u2".into()],
            labels: vec![1, 0],
            k_effective: 2,
            centroids: vec![vec![0.0], vec![1.0]],
            objective: 0.0,
            iterations: 1,
            seed_used: 7,
            trace: vec![0.0],
        };
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"id\":\"u1\",\"cluster\":1}\n{\"id\":\"u2\",\"cluster\":0}\n"
        );
        let m = a.manifest(&ClusteringConfig::default().with_k(2));
        assert_eq!(m["seed_used"], 7);
        assert_eq!(m["config"]["k"], 2);
    }
}
