//! Open-set intent detection: class centroids with adaptive per-class radii.
//!
//! A point is assigned to its nearest centroid when it lies within that
//! class's radius and is rejected as [`UNKNOWN`] otherwise. Radii are fit per
//! class either in closed form (`mean + λ·std` of in-class distances) or by a
//! balanced push/pull fixed point. An optional within-class whitening
//! transform can be learned first and is applied to every input.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingMatrix;
use crate::linalg::{argmin, dist, mat_vec, mean};

/// Reserved label for rejected inputs.
pub const UNKNOWN: &str = "UNKNOWN";

const MODEL_VERSION: u32 = 1;
const METRIC: &str = "euclidean-l2norm";
/// Pairwise-distance sample cap used for the radius floor.
const FLOOR_SAMPLE: usize = 2000;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("no embedding for labeled id {0:?}")]
    MissingEmbedding(String),
    #[error("class {0:?} has no examples")]
    EmptyClass(String),
    #[error("no labeled training examples")]
    NoClasses,
    #[error("{0:?} is reserved and cannot be a training label")]
    ReservedLabel(String),
    #[error("projection needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("within-class scatter is degenerate even after ridge regularization")]
    DegenerateScatter,
    #[error("unknown boundary mode {0:?}")]
    UnknownMode(String),
    #[error("vector has dimension {found}, model expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("label {0:?} is neither a known class nor UNKNOWN")]
    LabelMismatch(String),
    #[error("{predictions} predictions but {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Statistic,
    Balanced,
}

impl FromStr for BoundaryMode {
    type Err = DetectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "statistic" => Ok(Self::Statistic),
            "balanced" => Ok(Self::Balanced),
            other => Err(DetectionError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Statistic => "statistic",
            Self::Balanced => "balanced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    /// Width multiplier for statistic mode.
    pub lambda: f64,
    /// Balanced-mode step size as a fraction of the class mean distance.
    pub eta_scale: f64,
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            eta_scale: 0.05,
            tol: 1e-4,
            max_steps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub mode: BoundaryMode,
    pub params: BoundaryParams,
    /// Learn a within-class whitening transform before fitting boundaries.
    pub project: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            mode: BoundaryMode::Statistic,
            params: BoundaryParams::default(),
            project: false,
        }
    }
}

/// Per-label centroids, in lexicographic label order.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub labels: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

/// Group embedding rows by label, in lexicographic label order.
fn group_rows<'a>(
    embeddings: &'a EmbeddingMatrix,
    labels: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, Vec<&'a [f64]>>, DetectionError> {
    let mut groups: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
    for (id, label) in labels {
        if label == UNKNOWN {
            return Err(DetectionError::ReservedLabel(label.clone()));
        }
        let row = embeddings
            .get(id)
            .ok_or_else(|| DetectionError::MissingEmbedding(id.clone()))?;
        groups.entry(label.clone()).or_default().push(row);
    }
    if groups.is_empty() {
        return Err(DetectionError::NoClasses);
    }
    Ok(groups)
}

/// Mean vector of each class.
pub fn fit_centroids(
    embeddings: &EmbeddingMatrix,
    labels: &BTreeMap<String, String>,
) -> Result<CentroidSet, DetectionError> {
    let groups = group_rows(embeddings, labels)?;
    let mut set = CentroidSet {
        labels: Vec::new(),
        centroids: Vec::new(),
        counts: Vec::new(),
    };
    for (label, rows) in groups {
        if rows.is_empty() {
            return Err(DetectionError::EmptyClass(label));
        }
        set.centroids.push(mean(rows.iter().copied(), embeddings.dim()));
        set.counts.push(rows.len());
        set.labels.push(label);
    }
    Ok(set)
}

/// Pooled within-class scatter `(1/N) Σ (x − c_y)(x − c_y)ᵀ`.
pub fn within_class_scatter(
    embeddings: &EmbeddingMatrix,
    labels: &BTreeMap<String, String>,
) -> Result<DMatrix<f64>, DetectionError> {
    let d = embeddings.dim();
    let groups = group_rows(embeddings, labels)?;
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let mut total = 0usize;
    for rows in groups.values() {
        let c = mean(rows.iter().copied(), d);
        for r in rows {
            let diff = nalgebra::DVector::from_iterator(d, r.iter().zip(&c).map(|(x, m)| x - m));
            scatter += &diff * diff.transpose();
        }
        total += rows.len();
    }
    Ok(scatter / total as f64)
}

/// Within-class whitening `W = (S_w + εI)^(-1/2)` with `ε = 1e-6·tr(S_w)/d`.
/// Returned as row-major `d × d`.
pub fn fit_projection(
    embeddings: &EmbeddingMatrix,
    labels: &BTreeMap<String, String>,
) -> Result<Vec<Vec<f64>>, DetectionError> {
    let classes: std::collections::BTreeSet<&String> = labels.values().collect();
    if classes.len() < 2 {
        return Err(DetectionError::TooFewClasses(classes.len()));
    }
    let scatter = within_class_scatter(embeddings, labels)?;
    inverse_sqrt_ridge(scatter)
}

fn inverse_sqrt_ridge(scatter: DMatrix<f64>) -> Result<Vec<Vec<f64>>, DetectionError> {
    let d = scatter.nrows();
    let eps = 1e-6 * scatter.trace() / d as f64;
    let ridged = scatter + DMatrix::<f64>::identity(d, d) * eps;
    let eig = SymmetricEigen::new(ridged);
    if eig.eigenvalues.iter().any(|&l| !l.is_finite() || l <= 0.0) {
        return Err(DetectionError::DegenerateScatter);
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(DetectionError::DegenerateScatter);
    }
    Ok((0..d).map(|i| w.row(i).iter().copied().collect()).collect())
}

/// `mean + λ·std` (population std) of in-class distances.
pub fn statistic_radius(distances: &[f64], lambda: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let n = distances.len() as f64;
    let mu = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n;
    mu + lambda * var.sqrt()
}

/// Balanced push/pull fixed point: the radius grows while more class points
/// lie outside than inside and shrinks otherwise. Starts from the mean
/// distance with step `η = eta_scale·mean`. Stops when a step is below `tol`,
/// when the iterate returns within `tol` of where it was two steps earlier
/// (a two-cycle straddling the balance point), or after `max_steps`.
pub fn balanced_radius(distances: &[f64], params: &BoundaryParams) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let n = distances.len() as f64;
    let mu = distances.iter().sum::<f64>() / n;
    let eta = params.eta_scale * mu;
    if eta == 0.0 {
        return mu;
    }
    let mut radius = mu;
    let mut two_back = f64::NAN;
    for _ in 0..params.max_steps {
        let outside = distances.iter().filter(|&&d| d >= radius).count() as f64;
        let step = eta * (outside - (n - outside)) / n;
        let next = (radius + step).max(0.0);
        if step.abs() < params.tol || (next - two_back).abs() < params.tol {
            return next;
        }
        two_back = radius;
        radius = next;
    }
    radius
}

/// `1e-3 ×` mean pairwise distance of the training points, computed on an
/// evenly strided sample of at most 2000 rows.
pub fn radius_floor(rows: &[&[f64]]) -> f64 {
    let stride = rows.len().div_ceil(FLOOR_SAMPLE).max(1);
    let sample: Vec<&[f64]> = rows.iter().step_by(stride).copied().collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            sum += dist(sample[i], sample[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return 0.0;
    }
    1e-3 * sum / pairs as f64
}

/// Fit one radius per class in `centroids`, floored at [`radius_floor`].
pub fn fit_boundaries(
    embeddings: &EmbeddingMatrix,
    labels: &BTreeMap<String, String>,
    centroids: &CentroidSet,
    mode: BoundaryMode,
    params: &BoundaryParams,
) -> Result<Vec<f64>, DetectionError> {
    let groups = group_rows(embeddings, labels)?;
    let all_rows: Vec<&[f64]> = groups.values().flatten().copied().collect();
    let floor = radius_floor(&all_rows);
    centroids
        .labels
        .iter()
        .zip(&centroids.centroids)
        .map(|(label, c)| {
            let rows = groups
                .get(label)
                .ok_or_else(|| DetectionError::EmptyClass(label.clone()))?;
            let distances: Vec<f64> = rows.iter().map(|r| dist(r, c)).collect();
            let r = match mode {
                BoundaryMode::Statistic => statistic_radius(&distances, params.lambda),
                BoundaryMode::Balanced => balanced_radius(&distances, params),
            };
            Ok(r.max(floor))
        })
        .collect()
}

/// Outcome of classifying one vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Nearest label, or [`UNKNOWN`] when outside its radius.
    pub label: String,
    pub nearest: String,
    pub nearest_index: usize,
    pub distance: f64,
    /// `radius(nearest) − distance`.
    pub margin: f64,
    pub radius: f64,
    /// Rejected by [`DetectionModel::predict_nonempty`] for being the zero
    /// vector.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_input: bool,
}

impl Prediction {
    pub fn is_unknown(&self) -> bool {
        self.label == UNKNOWN
    }

    /// `margin / radius` clamped to `[0, 1]`; 0 for rejected inputs.
    pub fn confidence(&self) -> f64 {
        if self.is_unknown() {
            0.0
        } else if self.radius > 0.0 {
            (self.margin / self.radius).clamp(0.0, 1.0)
        } else if self.margin >= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionModel {
    labels: Vec<String>,
    centroids: Vec<Vec<f64>>,
    radii: Vec<f64>,
    projection: Option<Vec<Vec<f64>>>,
    mode: BoundaryMode,
    dim: usize,
    counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    metric: String,
    labels: Vec<String>,
    dim: usize,
    centroids: Vec<Vec<f64>>,
    radii: Vec<f64>,
    projection: Option<Vec<Vec<f64>>>,
    mode: BoundaryMode,
    #[serde(default)]
    counts: Vec<usize>,
}

impl DetectionModel {
    /// Build a model from parts, checking the structural invariants.
    pub fn from_parts(
        labels: Vec<String>,
        centroids: Vec<Vec<f64>>,
        radii: Vec<f64>,
        projection: Option<Vec<Vec<f64>>>,
        mode: BoundaryMode,
        dim: usize,
        counts: Vec<usize>,
    ) -> Result<Self, DetectionError> {
        let bad = |m: &str| Err(DetectionError::InvalidModel(m.to_string()));
        if labels.is_empty() {
            return bad("no labels");
        }
        if labels.len() != centroids.len() || labels.len() != radii.len() {
            return bad("labels, centroids and radii differ in length");
        }
        if !counts.is_empty() && counts.len() != labels.len() {
            return bad("counts length differs from labels");
        }
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return bad("duplicate labels");
        }
        if labels.iter().any(|l| l == UNKNOWN) {
            return Err(DetectionError::ReservedLabel(UNKNOWN.into()));
        }
        if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return bad("radii must be finite and non-negative");
        }
        let space_dim = match &projection {
            Some(p) => {
                if p.iter().any(|row| row.len() != dim) {
                    return bad("projection columns differ from dim");
                }
                p.len()
            }
            None => dim,
        };
        if centroids
            .iter()
            .any(|c| c.len() != space_dim || c.iter().any(|x| !x.is_finite()))
        {
            return bad("centroid dimension or values invalid");
        }
        Ok(Self {
            labels,
            centroids,
            radii,
            projection,
            mode,
            dim,
            counts,
        })
    }

    /// Fit centroids (and optionally a projection), then radii.
    pub fn fit(
        embeddings: &EmbeddingMatrix,
        labels: &BTreeMap<String, String>,
        config: &DetectorConfig,
    ) -> Result<Self, DetectionError> {
        let (space, projection) = if config.project {
            let w = fit_projection(embeddings, labels)?;
            let mut projected = EmbeddingMatrix::new(w.len());
            for id in labels.keys() {
                let row = embeddings
                    .get(id)
                    .ok_or_else(|| DetectionError::MissingEmbedding(id.clone()))?;
                projected
                    .insert(id.clone(), mat_vec(&w, row))
                    .map_err(|_| DetectionError::DegenerateScatter)?;
            }
            (projected, Some(w))
        } else {
            let ids: Vec<&String> = labels.keys().collect();
            let sub = embeddings
                .subset(&ids)
                .map_err(DetectionError::MissingEmbedding)?;
            (sub, None)
        };
        let set = fit_centroids(&space, labels)?;
        let radii = fit_boundaries(&space, labels, &set, config.mode, &config.params)?;
        Self::from_parts(
            set.labels,
            set.centroids,
            radii,
            projection,
            config.mode,
            embeddings.dim(),
            set.counts,
        )
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn projection(&self) -> Option<&[Vec<f64>]> {
        self.projection.as_deref()
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    /// Input dimension expected by [`predict`](Self::predict).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Copy with radii replaced; lengths must match.
    pub fn with_radii(&self, radii: Vec<f64>) -> Result<Self, DetectionError> {
        Self::from_parts(
            self.labels.clone(),
            self.centroids.clone(),
            radii,
            self.projection.clone(),
            self.mode,
            self.dim,
            self.counts.clone(),
        )
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, DetectionError> {
        if x.len() != self.dim {
            return Err(DetectionError::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(match &self.projection {
            Some(p) => mat_vec(p, x),
            None => x.to_vec(),
        })
    }

    /// Nearest centroid within its radius, else [`UNKNOWN`].
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, DetectionError> {
        self.predict_inner(x, false)
    }

    /// As [`predict`](Self::predict), but the zero vector is always rejected.
    /// Use this for TF-IDF inputs, where zero means no token was in the
    /// vocabulary and the point has no position on the unit sphere.
    pub fn predict_nonempty(&self, x: &[f64]) -> Result<Prediction, DetectionError> {
        self.predict_inner(x, true)
    }

    fn predict_inner(&self, x: &[f64], reject_empty: bool) -> Result<Prediction, DetectionError> {
        let z = self.project(x)?;
        let empty_input = reject_empty && x.iter().all(|&v| v == 0.0);
        let (k, distance) = argmin(self.centroids.iter().map(|c| dist(&z, c)))
            .expect("model has at least one label");
        let radius = self.radii[k];
        let margin = radius - distance;
        let nearest = self.labels[k].clone();
        let label = if margin >= 0.0 && !empty_input {
            nearest.clone()
        } else {
            UNKNOWN.to_string()
        };
        Ok(Prediction {
            label,
            nearest,
            nearest_index: k,
            distance,
            margin,
            radius,
            empty_input,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            metric: METRIC.to_string(),
            labels: self.labels.clone(),
            dim: self.dim,
            centroids: self.centroids.clone(),
            radii: self.radii.clone(),
            projection: self.projection.clone(),
            mode: self.mode,
            counts: self.counts.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DetectionError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(DetectionError::InvalidModel(format!(
                "unsupported version {}",
                file.version
            )));
        }
        if file.metric != METRIC {
            return Err(DetectionError::InvalidModel(format!(
                "unsupported metric {:?}",
                file.metric
            )));
        }
        Self::from_parts(
            file.labels,
            file.centroids,
            file.radii,
            file.projection,
            file.mode,
            file.dim,
            file.counts,
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectionError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DetectionError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Open-set detection scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// F1 for each known class that occurs in gold or predictions.
    pub per_class_f1: BTreeMap<String, f64>,
    pub macro_f1_known: f64,
    /// `None` when there is no UNKNOWN gold.
    pub unknown_recall: Option<f64>,
    /// `None` when nothing was predicted UNKNOWN.
    pub unknown_precision: Option<f64>,
}

pub fn evaluate_detection<S: AsRef<str>, G: AsRef<str>>(
    predictions: &[S],
    gold: &[G],
    known: &[String],
) -> Result<DetectionMetrics, DetectionError> {
    if predictions.len() != gold.len() {
        return Err(DetectionError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let valid = |l: &str| l == UNKNOWN || known.iter().any(|k| k == l);
    for l in predictions.iter().map(AsRef::as_ref).chain(gold.iter().map(AsRef::as_ref)) {
        if !valid(l) {
            return Err(DetectionError::LabelMismatch(l.to_string()));
        }
    }
    let n = predictions.len();
    let pairs: Vec<(&str, &str)> = predictions
        .iter()
        .map(AsRef::as_ref)
        .zip(gold.iter().map(AsRef::as_ref))
        .collect();
    let correct = pairs.iter().filter(|(p, g)| p == g).count();
    let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };

    let counts = |label: &str| {
        let tp = pairs.iter().filter(|(p, g)| *p == label && *g == label).count();
        let fp = pairs.iter().filter(|(p, g)| *p == label && *g != label).count();
        let fn_ = pairs.iter().filter(|(p, g)| *p != label && *g == label).count();
        (tp, fp, fn_)
    };

    let mut per_class_f1 = BTreeMap::new();
    for label in known {
        let (tp, fp, fn_) = counts(label);
        if tp + fp + fn_ == 0 {
            continue;
        }
        per_class_f1.insert(label.clone(), 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    }
    let macro_f1_known = if per_class_f1.is_empty() {
        0.0
    } else {
        per_class_f1.values().sum::<f64>() / per_class_f1.len() as f64
    };

    let (tp, fp, fn_) = counts(UNKNOWN);
    let unknown_recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let unknown_precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);

    Ok(DetectionMetrics {
        n,
        accuracy,
        per_class_f1,
        macro_f1_known,
        unknown_recall,
        unknown_precision,
    })
}
