//! Open-split evaluation: hold out whole intent classes, fit the detector on
//! the rest, then score detection and discovery.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{evaluate_detection, DetectionMetrics, DetectorConfig, UNKNOWN};
use crate::discovery::{clustering_scores, ClusteringConfig, EstimateKConfig};
use crate::embedding::Utterance;
use crate::pipeline::{discover, IntentModel, Labeler, PipelineConfig};

/// Known-class ratios swept when none is given.
pub const DEFAULT_RATIOS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("dataset needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("{stage} stage: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> BenchError {
    move |e| BenchError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub text_column: String,
    pub label_column: String,
}

impl DatasetSpec {
    /// `text,label` CSV named after the file stem.
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Self {
            name,
            path,
            text_column: "text".into(),
            label_column: "label".into(),
        }
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Utterance>, BenchError> {
    let file = std::fs::File::open(&spec.path)?;
    read_dataset(file, &spec.text_column, &spec.label_column)
}

/// One utterance per CSV row, ids are 0-based row numbers, labels trimmed.
pub fn read_dataset<R: Read>(reader: R, text_column: &str, label_column: &str) -> Result<Vec<Utterance>, BenchError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| BenchError::Csv {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| BenchError::MissingColumn(name.to_string()))
    };
    let (ti, li) = (col(text_column)?, col(label_column)?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| BenchError::Csv {
            row: row + 1,
            message: e.to_string(),
        })?;
        let text = rec.get(ti).unwrap_or_default();
        let label = rec.get(li).unwrap_or_default().trim();
        out.push(Utterance::labeled(row.to_string(), text, label));
    }
    if out.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub known_class_ratio: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(known_class_ratio: f64, seed: u64) -> Self {
        Self {
            known_class_ratio,
            train_fraction: 0.7,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSplit {
    /// Known-class rows used for fitting.
    pub train: Vec<Utterance>,
    /// Remaining known rows plus every unknown-class row, gold mapped to
    /// UNKNOWN for the latter.
    pub test: Vec<Utterance>,
    /// Original gold label of every test row.
    pub original_gold: BTreeMap<String, String>,
    pub known: Vec<String>,
    pub unknown: Vec<String>,
}

/// Shuffle classes by seed and keep the first `⌈ratio·C⌉` as known. Each
/// known class contributes `round(train_fraction · rows)` training rows (at
/// least one) chosen by the same seeded generator.
pub fn make_open_split(dataset: &[Utterance], split: &SplitConfig) -> Result<OpenSplit, BenchError> {
    let r = split.known_class_ratio;
    if !(r > 0.0 && r <= 1.0) {
        return Err(BenchError::InvalidSplit(format!("known_class_ratio {r} not in (0, 1]")));
    }
    let f = split.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(BenchError::InvalidSplit(format!("train_fraction {f} not in (0, 1)")));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in dataset.iter().enumerate() {
        by_class.entry(u.gold_label.as_deref().unwrap_or("")).or_default().push(i);
    }
    let c = by_class.len();
    if c < 2 {
        return Err(BenchError::TooFewClasses(c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    let mut classes: Vec<&str> = by_class.keys().copied().collect();
    classes.shuffle(&mut rng);
    // guard against 0.7 · 10 = 7.000000000000001
    let n_known = ((r * c as f64 - 1e-9).ceil() as usize).clamp(1, c);
    let known: BTreeSet<&str> = classes[..n_known].iter().copied().collect();

    let mut in_train = vec![false; dataset.len()];
    for &class in &known {
        let mut rows = by_class[class].clone();
        rows.shuffle(&mut rng);
        let n_train = ((f * rows.len() as f64).round() as usize).clamp(1, rows.len());
        for &i in &rows[..n_train] {
            in_train[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut original_gold = BTreeMap::new();
    for (i, u) in dataset.iter().enumerate() {
        let gold = u.gold_label.clone().unwrap_or_default();
        if in_train[i] {
            train.push(u.clone());
        } else {
            let mapped = if known.contains(gold.as_str()) {
                gold.clone()
            } else {
                UNKNOWN.to_string()
            };
            test.push(Utterance::labeled(u.id.clone(), u.text.clone(), mapped));
            original_gold.insert(u.id.clone(), gold);
        }
    }
    let mut sorted_classes = classes.clone();
    sorted_classes.sort_unstable();
    Ok(OpenSplit {
        train,
        test,
        original_gold,
        known: known.iter().map(|s| s.to_string()).collect(),
        unknown: sorted_classes
            .into_iter()
            .filter(|c| !known.contains(c))
            .map(str::to_string)
            .collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub detector: DetectorConfig,
    pub clustering: ClusteringConfig,
    pub estimate: EstimateKConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryScores {
    pub n: usize,
    pub nmi: f64,
    pub ari: f64,
    pub accuracy: f64,
    pub k_estimated: usize,
    pub k_true: usize,
    /// Canonical label of each discovered cluster.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DiscoverySection {
    /// No unknown-class rows in the test split.
    NotApplicable,
    Scored(DiscoveryScores),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub fit_seconds: f64,
    pub detect_seconds: f64,
    pub discover_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub split: SplitConfig,
    pub config: BenchConfig,
    pub known_classes: Vec<String>,
    pub unknown_classes: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub detection: DetectionMetrics,
    pub discovery: DiscoverySection,
    /// Wall-clock time; the only field that varies between identical runs.
    pub timing: StageTimings,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// The report JSON with the timing field removed.
    pub fn to_json_without_timing(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("timing");
        serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
    }

    /// Aligned two-column plain-text summary.
    pub fn table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut rows: Vec<(String, String)> = vec![
            ("dataset".into(), self.dataset.clone()),
            ("known ratio".into(), self.split.known_class_ratio.to_string()),
            ("seed".into(), self.split.seed.to_string()),
            (
                "classes known/unknown".into(),
                format!("{}/{}", self.known_classes.len(), self.unknown_classes.len()),
            ),
            ("train/test rows".into(), format!("{}/{}", self.n_train, self.n_test)),
            ("detection accuracy".into(), format!("{:.4}", self.detection.accuracy)),
            ("macro-F1 known".into(), format!("{:.4}", self.detection.macro_f1_known)),
            ("UNKNOWN recall".into(), fmt_opt(self.detection.unknown_recall)),
            ("UNKNOWN precision".into(), fmt_opt(self.detection.unknown_precision)),
        ];
        match &self.discovery {
            DiscoverySection::NotApplicable => rows.push(("discovery".into(), "not applicable".into())),
            DiscoverySection::Scored(d) => {
                rows.push(("discovery NMI".into(), format!("{:.4}", d.nmi)));
                rows.push(("discovery ARI".into(), format!("{:.4}", d.ari)));
                rows.push(("discovery accuracy".into(), format!("{:.4}", d.accuracy)));
                rows.push(("k estimated/true".into(), format!("{}/{}", d.k_estimated, d.k_true)));
            }
        }
        let t = &self.timing;
        rows.push((
            "seconds fit/detect/discover".into(),
            format!("{:.3}/{:.3}/{:.3}", t.fit_seconds, t.detect_seconds, t.discover_seconds),
        ));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}

/// `bench_<dataset>_<ratio>_<seed>.json`
pub fn report_filename(dataset: &str, ratio: f64, seed: u64) -> String {
    format!("bench_{dataset}_{ratio}_{seed}.json")
}

/// Fit on the split's training rows, score detection on the test rows, then
/// cluster the true unknown-class test rows and score them against their
/// original labels.
pub fn run_benchmark(
    name: &str,
    dataset: &[Utterance],
    split: &SplitConfig,
    config: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    let s = make_open_split(dataset, split)?;

    let t0 = Instant::now();
    let model = IntentModel::train(&s.train, None, &config.detector).map_err(stage("fit"))?;
    let fit_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let predictions = model.predict(&s.test, None).map_err(stage("detect"))?;
    let predicted: Vec<&str> = predictions.iter().map(|p| p.label.as_str()).collect();
    let gold: Vec<&str> = s.test.iter().map(|u| u.gold_label.as_deref().unwrap_or("")).collect();
    let detection = evaluate_detection(&predicted, &gold, &s.known).map_err(stage("detect"))?;
    let detect_seconds = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let unknown_rows: Vec<&Utterance> = s
        .test
        .iter()
        .filter(|u| u.gold_label.as_deref() == Some(UNKNOWN))
        .collect();
    let discovery = if unknown_rows.is_empty() {
        DiscoverySection::NotApplicable
    } else {
        let pipeline = PipelineConfig {
            clustering: config.clustering,
            estimate: config.estimate,
            min_discover: 1,
        };
        let (assignment, intents, estimate) =
            discover(&unknown_rows, None, &Labeler::bundled(), &pipeline).map_err(stage("discover"))?;
        let truth: Vec<&str> = unknown_rows
            .iter()
            .map(|u| s.original_gold[&u.id].as_str())
            .collect();
        let m = clustering_scores(&assignment, &truth);
        let k_true = truth.iter().collect::<BTreeSet<_>>().len();
        DiscoverySection::Scored(DiscoveryScores {
            n: unknown_rows.len(),
            nmi: m.nmi,
            ari: m.ari,
            accuracy: m.accuracy,
            k_estimated: estimate.map_or(intents.len(), |e| e.k),
            k_true,
            labels: intents.into_iter().map(|i| i.label).collect(),
        })
    };
    let discover_seconds = t2.elapsed().as_secs_f64();

    Ok(BenchReport {
        dataset: name.to_string(),
        split: *split,
        config: config.clone(),
        known_classes: s.known,
        unknown_classes: s.unknown,
        n_train: s.train.len(),
        n_test: s.test.len(),
        detection,
        discovery,
        timing: StageTimings {
            fit_seconds,
            detect_seconds,
            discover_seconds,
        },
    })
}

/// Run and write the report into `out_dir`, returning its path.
pub fn run_and_write(
    spec: &DatasetSpec,
    split: &SplitConfig,
    config: &BenchConfig,
    out_dir: &Path,
) -> Result<(BenchReport, PathBuf), BenchError> {
    let data = load_dataset(spec)?;
    let report = run_benchmark(&spec.name, &data, split, config)?;
    let path = out_dir.join(report_filename(&spec.name, split.known_class_ratio, split.seed));
    std::fs::write(&path, report.to_json())?;
    Ok((report, path))
}
