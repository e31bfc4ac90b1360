//! WebAssembly bindings for the browser demo. Every function takes and
//! returns JSON strings so the page needs no generated typings.

use std::collections::BTreeMap;

use oir_core::detection::{BoundaryMode, DetectionModel, DetectorConfig};
use oir_core::discovery::{cluster, estimate_k, ClusteringConfig, EstimateKConfig, KChoice, Method};
use oir_core::embedding::EmbeddingMatrix;
use oir_core::normalization::{canonicalize_str, merge_labels, SynonymLexicon};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Deserialize)]
struct ClusterRequest {
    points: Vec<[f64; 2]>,
    #[serde(default)]
    method: Option<String>,
    /// 0 or absent for automatic.
    #[serde(default)]
    k: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct ClusterReply {
    k: usize,
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    estimated: bool,
}

#[derive(Deserialize)]
struct DetectRequest {
    /// `[x, y, class]` training points.
    train: Vec<(f64, f64, String)>,
    queries: Vec<[f64; 2]>,
    #[serde(default)]
    mode: Option<String>,
}

#[derive(Serialize)]
struct Boundary {
    label: String,
    center: Vec<f64>,
    radius: f64,
}

#[derive(Serialize)]
struct DetectReply {
    boundaries: Vec<Boundary>,
    predictions: Vec<String>,
}

#[derive(Deserialize)]
struct CanonRequest {
    labels: Vec<String>,
    #[serde(default)]
    synonyms: String,
}

#[derive(Serialize)]
struct CanonRow {
    label: String,
    canonical: Option<String>,
}

#[derive(Serialize)]
struct CanonReply {
    rows: Vec<CanonRow>,
    groups: Vec<oir_core::normalization::LabelGroup>,
}

fn reply<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("reply serializes"),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

fn parse<'a, T: Deserialize<'a>>(json: &'a str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| e.to_string())
}

fn matrix(points: impl Iterator<Item = Vec<f64>>) -> Result<EmbeddingMatrix, String> {
    EmbeddingMatrix::from_points(points.collect()).map_err(|e| e.to_string())
}

/// Cluster 2-D points. Request: `{points: [[x, y]...], method?, k?, seed?}`.
#[wasm_bindgen]
pub fn cluster_points(request: &str) -> String {
    reply(parse::<ClusterRequest>(request).and_then(|r| {
        if r.points.is_empty() {
            return Err("no points".into());
        }
        let x = matrix(r.points.iter().map(|p| p.to_vec()))?;
        let mut config = ClusteringConfig {
            seed: r.seed,
            ..Default::default()
        };
        if let Some(m) = &r.method {
            config.method = m.parse::<Method>().map_err(|e| e.to_string())?;
        }
        let estimated = r.k == 0;
        let k = if estimated {
            let est = EstimateKConfig {
                k_max: EstimateKConfig::default().k_max.min(x.len()),
                ..Default::default()
            };
            estimate_k(&x, &est, &config).map_err(|e| e.to_string())?.k
        } else {
            r.k.min(x.len())
        };
        config.k = KChoice::Fixed(k);
        let a = cluster(&x, &config).map_err(|e| e.to_string())?;
        Ok(ClusterReply {
            k: a.k_effective,
            labels: a.labels,
            centroids: a.centroids,
            estimated,
        })
    }))
}

/// Fit per-class boundaries on labeled points and classify queries.
/// Request: `{train: [[x, y, class]...], queries: [[x, y]...], mode?}`.
#[wasm_bindgen]
pub fn detect_points(request: &str) -> String {
    reply(parse::<DetectRequest>(request).and_then(|r| {
        if r.train.is_empty() {
            return Err("no training points".into());
        }
        let x = matrix(r.train.iter().map(|(a, b, _)| vec![*a, *b]))?;
        let labels: BTreeMap<String, String> = x
            .ids()
            .iter()
            .zip(&r.train)
            .map(|(id, (_, _, c))| (id.clone(), c.clone()))
            .collect();
        let mut config = DetectorConfig::default();
        if let Some(m) = &r.mode {
            config.mode = m.parse::<BoundaryMode>().map_err(|e| e.to_string())?;
        }
        let model = DetectionModel::fit(&x, &labels, &config).map_err(|e| e.to_string())?;
        let predictions = r
            .queries
            .iter()
            .map(|q| model.predict(q).map(|p| p.label).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let boundaries = model
            .labels()
            .iter()
            .zip(model.centroids())
            .zip(model.radii())
            .map(|((label, center), &radius)| Boundary {
                label: label.clone(),
                center: center.clone(),
                radius,
            })
            .collect();
        Ok(DetectReply { boundaries, predictions })
    }))
}

/// Canonicalize and group labels. Request: `{labels: [...], synonyms?: "tsv"}`.
#[wasm_bindgen]
pub fn canonicalize_labels(request: &str) -> String {
    reply(parse::<CanonRequest>(request).and_then(|r| {
        let syn = SynonymLexicon::parse(&r.synonyms).map_err(|e| e.to_string())?;
        let rows = r
            .labels
            .iter()
            .map(|l| CanonRow {
                label: l.clone(),
                canonical: canonicalize_str(l, &syn).ok().map(|c| c.display),
            })
            .collect();
        Ok(CanonReply {
            rows,
            groups: merge_labels(&r.labels, &syn),
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn call(f: fn(&str) -> String, req: Value) -> Value {
        serde_json::from_str(&f(&req.to_string())).unwrap()
    }

    #[test]
    fn clusters_two_groups() {
        let mut points = Vec::new();
        for i in 0..15 {
            let d = i as f64 * 0.01;
            points.push(vec![d, -d]);
            points.push(vec![5.0 + d, 5.0 + d]);
        }
        let v = call(cluster_points, serde_json::json!({ "points": points }));
        assert_eq!(v["k"], 2);
        assert_eq!(v["estimated"], true);
        let labels = v["labels"].as_array().unwrap();
        assert!(labels.chunks(2).all(|c| c[0] != c[1]));
        let v = call(cluster_points, serde_json::json!({ "points": points, "k": 3, "method": "agglomerative" }));
        assert_eq!(v["k"], 3);
        let v = call(cluster_points, serde_json::json!({ "points": [] }));
        assert!(v["error"].is_string());
    }

    #[test]
    fn boundaries_and_rejection() {
        let mut train = Vec::new();
        for i in 0..10 {
            let d = (i as f64 - 4.5) * 0.05;
            train.push(serde_json::json!([d, 0.0, "a"]));
            train.push(serde_json::json!([10.0 + d, 0.0, "b"]));
        }
        let v = call(
            detect_points,
            serde_json::json!({ "train": train, "queries": [[0.0, 0.0], [10.0, 0.0], [5.0, 8.0]] }),
        );
        assert_eq!(v["predictions"], serde_json::json!(["a", "b", "UNKNOWN"]));
        assert_eq!(v["boundaries"].as_array().unwrap().len(), 2);
        let v = call(detect_points, serde_json::json!({ "train": train, "queries": [], "mode": "nope" }));
        assert!(v["error"].is_string());
    }

    #[test]
    fn canonical_groups() {
        let v = call(
            canonicalize_labels,
            serde_json::json!({
                "labels": ["book_flight", "book_flights", "flight_book", "purchase_tickets", ""],
                "synonyms": "purchase\tbuy\n",
            }),
        );
        assert_eq!(v["rows"][1]["canonical"], "book_flight");
        assert_eq!(v["rows"][3]["canonical"], "buy_ticket");
        assert!(v["rows"][4]["canonical"].is_null());
        assert_eq!(v["groups"][0]["members"].as_array().unwrap().len(), 3);
    }
}
