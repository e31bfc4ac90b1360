//! Batch orchestration: detect known intents, route the rest to discovery,
//! label and canonicalize the discovered clusters.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionError, DetectionModel, DetectorConfig, Prediction};
use crate::discovery::{cluster, estimate_k, ClusterError, ClusteringConfig, EstimateKConfig, KChoice, KEstimate};
use crate::embedding::{l2_normalize, EmbeddingError, EmbeddingMatrix, Utterance, Vocabulary};
use crate::labeling::{extract_from_text, label_cluster, tfidf_centroid, LabelSource, Lexicon};
use crate::normalization::{canonicalize_label, SynonymLexicon};

/// Label given to UNKNOWN utterances when too few of them are left to cluster.
pub const UNCLASSIFIED: &str = "unclassified";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no embedding for utterance {0:?}")]
    MissingEmbedding(String),
    #[error("embedding dimension {found} does not match model dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("model has no TF-IDF vocabulary; supply embeddings")]
    NoVocabulary,
    #[error("training set has no labeled utterances")]
    NoTrainingData,
    #[error("detection: {0}")]
    Detection(#[from] DetectionError),
    #[error("discovery: {0}")]
    Discovery(#[from] ClusterError),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("vocabulary file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Detected,
    Discovered,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Detected => "detected",
            Self::Discovered => "discovered",
        })
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detected" => Ok(Self::Detected),
            "discovered" => Ok(Self::Discovered),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub job_id: String,
    pub utterance_id: String,
    pub text: String,
    pub label: String,
    pub confidence: f64,
    pub source: Source,
    /// Present for discovered records; −1 for unclassified ones.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cluster_id: Option<i64>,
    /// Present for detected records.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub detected: usize,
    pub discovered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub clustering: ClusteringConfig,
    pub estimate: EstimateKConfig,
    /// Fewer UNKNOWN utterances than this are not clustered.
    pub min_discover: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            clustering: ClusteringConfig::default(),
            estimate: EstimateKConfig::default(),
            min_discover: 10,
        }
    }
}

/// One discovered cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredIntent {
    pub cluster_id: i64,
    /// Canonical label.
    pub label: String,
    /// Label before canonicalization.
    pub raw_label: String,
    pub confidence: f64,
    pub label_source: LabelSource,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    /// One record per input utterance, by utterance id.
    pub records: Vec<ResultRecord>,
    pub counts: Counts,
    pub k_estimate: Option<KEstimate>,
    pub intents: Vec<DiscoveredIntent>,
}

/// A detector plus the TF-IDF vocabulary it was trained with, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentModel {
    pub detector: DetectionModel,
    pub vocab: Option<Vocabulary>,
}

/// Where the vocabulary of a model file is stored.
pub fn vocab_path(model_path: &Path) -> PathBuf {
    let mut name = model_path.file_name().unwrap_or_default().to_os_string();
    name.push(".vocab.json");
    model_path.with_file_name(name)
}

impl IntentModel {
    /// Fit on labeled utterances. Without `embeddings` a TF-IDF vocabulary is
    /// fit on the training texts; external vectors are L2-normalized.
    pub fn train(
        train: &[Utterance],
        embeddings: Option<&EmbeddingMatrix>,
        config: &DetectorConfig,
    ) -> Result<Self, PipelineError> {
        let labels: BTreeMap<String, String> = train
            .iter()
            .filter_map(|u| Some((u.id.clone(), u.gold_label.clone()?)))
            .collect();
        if labels.is_empty() {
            return Err(PipelineError::NoTrainingData);
        }
        let labeled: Vec<&Utterance> = train.iter().filter(|u| u.gold_label.is_some()).collect();
        let (matrix, vocab) = match embeddings {
            Some(m) => (normalized_subset(m, labeled.iter().map(|u| u.id.as_str()))?, None),
            None => {
                let texts: Vec<&str> = labeled.iter().map(|u| u.text.as_str()).collect();
                let vocab = Vocabulary::fit(&texts, 1)?;
                let owned: Vec<Utterance> = labeled.iter().map(|u| (*u).clone()).collect();
                (vocab.embed_all(&owned), Some(vocab))
            }
        };
        let detector = DetectionModel::fit(&matrix, &labels, config)?;
        Ok(Self { detector, vocab })
    }

    /// Write the model file and, for TF-IDF models, the vocabulary next to it.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        self.detector.save(path)?;
        if let Some(v) = &self.vocab {
            v.save(&vocab_path(path))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let detector = DetectionModel::load(path)?;
        let vp = vocab_path(path);
        let vocab = if vp.exists() {
            Some(Vocabulary::load(&vp)?)
        } else {
            None
        };
        Ok(Self { detector, vocab })
    }

    /// Embed and classify each utterance.
    pub fn predict(
        &self,
        batch: &[Utterance],
        embeddings: Option<&EmbeddingMatrix>,
    ) -> Result<Vec<Prediction>, PipelineError> {
        let x = self.embed(batch, embeddings)?;
        x.rows()
            .iter()
            .map(|r| Ok(self.detector.predict_nonempty(r)?))
            .collect()
    }

    fn embed(&self, batch: &[Utterance], embeddings: Option<&EmbeddingMatrix>) -> Result<EmbeddingMatrix, PipelineError> {
        let x = match (embeddings, &self.vocab) {
            (Some(m), _) => normalized_subset(m, batch.iter().map(|u| u.id.as_str()))?,
            (None, Some(v)) => v.embed_all(batch),
            (None, None) => return Err(PipelineError::NoVocabulary),
        };
        if x.dim() != self.detector.dim() {
            return Err(PipelineError::DimMismatch {
                expected: self.detector.dim(),
                found: x.dim(),
            });
        }
        Ok(x)
    }
}

fn normalized_subset<'a>(
    m: &EmbeddingMatrix,
    ids: impl Iterator<Item = &'a str>,
) -> Result<EmbeddingMatrix, PipelineError> {
    let mut out = EmbeddingMatrix::new(m.dim());
    for id in ids {
        let row = m
            .get(id)
            .ok_or_else(|| PipelineError::MissingEmbedding(id.to_string()))?;
        out.insert(id.to_string(), l2_normalize(row))?;
    }
    Ok(out)
}

/// Label resources used during discovery.
#[derive(Debug, Clone, Default)]
pub struct Labeler {
    pub lexicon: Lexicon,
    pub synonyms: SynonymLexicon,
}

impl Labeler {
    pub fn bundled() -> Self {
        Self {
            lexicon: Lexicon::bundled(),
            synonyms: SynonymLexicon::new(),
        }
    }
}

/// Cluster of each utterance, the discovered intents, and the k estimate.
pub type Discovery = (Vec<usize>, Vec<DiscoveredIntent>, Option<KEstimate>);

/// Cluster the given utterances and name each cluster. Returns the cluster of
/// each utterance (in input order), the discovered intents, and the k
/// estimate when k was chosen automatically.
pub fn discover(
    utterances: &[&Utterance],
    embeddings: Option<&EmbeddingMatrix>,
    labeler: &Labeler,
    config: &PipelineConfig,
) -> Result<Discovery, PipelineError> {
    let texts: Vec<&str> = utterances.iter().map(|u| u.text.as_str()).collect();
    let vocab = Vocabulary::fit(&texts, 1)?;
    let x = match embeddings {
        Some(m) => normalized_subset(m, utterances.iter().map(|u| u.id.as_str()))?,
        None => {
            let owned: Vec<Utterance> = utterances.iter().map(|u| (*u).clone()).collect();
            vocab.embed_all(&owned)
        }
    };
    let (k, estimate) = match config.clustering.k {
        KChoice::Fixed(k) => (k, None),
        KChoice::Auto => {
            let est_cfg = EstimateKConfig {
                k_max: config.estimate.k_max.min(x.len()),
                ..config.estimate
            };
            let e = estimate_k(&x, &est_cfg, &config.clustering)?;
            (e.k, Some(e))
        }
    };
    let assignment = cluster(&x, &config.clustering.with_k(k))?;

    let mut intents = Vec::with_capacity(assignment.k_effective);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); assignment.k_effective];
    for (i, &c) in assignment.labels.iter().enumerate() {
        members[c].push(i);
    }
    for (c, idx) in members.iter().enumerate() {
        let cluster_texts: Vec<&str> = idx.iter().map(|&i| texts[i]).collect();
        let pairs: Vec<_> = cluster_texts
            .iter()
            .map(|t| extract_from_text(t, &labeler.lexicon))
            .collect();
        let centroid = tfidf_centroid(&cluster_texts, &vocab);
        let named = label_cluster(&cluster_texts, &pairs, &vocab, &centroid, &labeler.lexicon)
            .ok()
            .and_then(|l| {
                let canon = canonicalize_label(&l.tokens, &labeler.synonyms).ok()?;
                Some((l, canon))
            });
        intents.push(match named {
            Some((l, canon)) => DiscoveredIntent {
                cluster_id: c as i64,
                label: canon.display,
                raw_label: l.display(),
                confidence: l.confidence,
                label_source: l.source,
                size: idx.len(),
            },
            None => DiscoveredIntent {
                cluster_id: c as i64,
                label: format!("cluster_{c}"),
                raw_label: format!("cluster_{c}"),
                confidence: 0.0,
                label_source: LabelSource::Keywords,
                size: idx.len(),
            },
        });
    }
    let (labels, intents) = merge_same_label(&assignment.labels, intents);
    Ok((labels, intents, estimate))
}

/// Fold clusters that received the same canonical label into one intent,
/// numbered by first appearance. Confidence is the size-weighted mean; the
/// raw label and label source come from the largest member cluster.
fn merge_same_label(assignment: &[usize], intents: Vec<DiscoveredIntent>) -> (Vec<usize>, Vec<DiscoveredIntent>) {
    let mut group_of = vec![0; intents.len()];
    let mut merged: Vec<(DiscoveredIntent, usize, f64)> = Vec::new();
    for (c, intent) in intents.into_iter().enumerate() {
        match merged.iter().position(|(m, _, _)| m.label == intent.label) {
            Some(g) => {
                group_of[c] = g;
                let (m, largest, weighted) = &mut merged[g];
                *weighted += intent.confidence * intent.size as f64;
                m.size += intent.size;
                if intent.size > *largest {
                    *largest = intent.size;
                    m.raw_label = intent.raw_label;
                    m.label_source = intent.label_source;
                }
            }
            None => {
                group_of[c] = merged.len();
                let (size, weighted) = (intent.size, intent.confidence * intent.size as f64);
                merged.push((intent, size, weighted));
            }
        }
    }
    let intents = merged
        .into_iter()
        .enumerate()
        .map(|(g, (mut m, _, weighted))| {
            m.cluster_id = g as i64;
            m.confidence = if m.size == 0 { 0.0 } else { weighted / m.size as f64 };
            m
        })
        .collect();
    (assignment.iter().map(|&c| group_of[c]).collect(), intents)
}

/// Run a batch end to end. Known predictions become detected records with
/// confidence `margin / radius`; UNKNOWN predictions are clustered and
/// labeled when there are at least `min_discover` of them, and marked
/// [`UNCLASSIFIED`] otherwise.
pub fn run_pipeline(
    job_id: &str,
    batch: &[Utterance],
    model: &IntentModel,
    embeddings: Option<&EmbeddingMatrix>,
    labeler: &Labeler,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let predictions = model.predict(batch, embeddings)?;
    let mut records = Vec::with_capacity(batch.len());
    let mut unknown: Vec<&Utterance> = Vec::new();
    for (u, p) in batch.iter().zip(&predictions) {
        if p.is_unknown() {
            unknown.push(u);
        } else {
            records.push(ResultRecord {
                job_id: job_id.to_string(),
                utterance_id: u.id.clone(),
                text: u.text.clone(),
                label: p.label.clone(),
                confidence: p.confidence(),
                source: Source::Detected,
                cluster_id: None,
                distance: Some(p.distance),
            });
        }
    }

    let discovered_record = |u: &Utterance, label: &str, confidence: f64, cluster_id: i64| ResultRecord {
        job_id: job_id.to_string(),
        utterance_id: u.id.clone(),
        text: u.text.clone(),
        label: label.to_string(),
        confidence,
        source: Source::Discovered,
        cluster_id: Some(cluster_id),
        distance: None,
    };

    let mut intents = Vec::new();
    let mut k_estimate = None;
    if !unknown.is_empty() {
        let enough = unknown.len() >= config.min_discover.max(1);
        let found = if enough {
            match discover(&unknown, embeddings, labeler, config) {
                Ok(found) => Some(found),
                // every UNKNOWN text tokenizes to nothing
                Err(PipelineError::Embedding(EmbeddingError::EmptyCorpus)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        match found {
            Some((assignment, found_intents, estimate)) => {
                for (u, &c) in unknown.iter().zip(&assignment) {
                    let intent = &found_intents[c];
                    records.push(discovered_record(u, &intent.label, intent.confidence, intent.cluster_id));
                }
                intents = found_intents;
                k_estimate = estimate;
            }
            None => {
                for u in &unknown {
                    records.push(discovered_record(u, UNCLASSIFIED, 0.0, -1));
                }
            }
        }
    }

    records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let counts = Counts {
        total: batch.len(),
        detected: batch.len() - unknown.len(),
        discovered: unknown.len(),
    };
    Ok(PipelineOutput {
        records,
        counts,
        k_estimate,
        intents,
    })
}

pub const CSV_HEADER: &str = "utterance_id,text,label,confidence,source,cluster_id,distance";

/// Report CSV with the fixed header. Floats use the shortest representation
/// that round-trips, so output is byte-stable.
pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("write to memory");
    for r in records {
        w.write_record([
            r.utterance_id.clone(),
            r.text.clone(),
            r.label.clone(),
            r.confidence.to_string(),
            r.source.to_string(),
            r.cluster_id.map(|c| c.to_string()).unwrap_or_default(),
            r.distance.map(|d| d.to_string()).unwrap_or_default(),
        ])
        .expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 input")
}

/// Discovered records (excluding unclassified ones) as a `text,label`
/// training CSV, for retraining the detector with the new intents.
pub fn discovered_training_csv(records: &[ResultRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["text", "label"]).expect("write to memory");
    for r in records {
        if r.source == Source::Discovered && r.label != UNCLASSIFIED {
            w.write_record([&r.text, &r.label]).expect("write to memory");
        }
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 input")
}
