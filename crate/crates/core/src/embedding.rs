//! Tokenization, TF-IDF vectors and the JSONL embedding/utterance formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("corpus has no non-empty documents")]
    EmptyCorpus,
    #[error("line {line}: vector has {found} entries, expected {expected}")]
    DimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: text is empty")]
    EmptyText { line: usize },
    #[error("line {line}: id is empty")]
    EmptyId { line: usize },
    #[error("row {id:?} has {found} entries, expected {expected}")]
    RowDim {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("row {0:?} contains a non-finite value")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One transcribed customer request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_label: None,
        }
    }

    pub fn labeled(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_label: Some(label.into()),
        }
    }
}

/// Lowercase, split on every non-alphanumeric character, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Scale to unit Euclidean norm. Zero vectors come back unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

/// Fitted TF-IDF vocabulary using the smoothed idf `ln((1+N)/(1+df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: BTreeMap<String, usize>,
    doc_freq: Vec<usize>,
    corpus_size: usize,
    idf: Vec<f64>,
}

impl Vocabulary {
    /// Fit over `docs`, keeping terms that occur in at least `min_df` documents.
    pub fn fit<S: AsRef<str>>(docs: &[S], min_df: usize) -> Result<Self, EmbeddingError> {
        let tokenized: Vec<Vec<String>> = docs
            .iter()
            .map(|d| tokenize(d.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        if tokenized.is_empty() {
            return Err(EmbeddingError::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in &tokenized {
            let unique: HashSet<&String> = doc.iter().collect();
            for t in unique {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        let n = tokenized.len();
        let mut terms = BTreeMap::new();
        let mut doc_freq = Vec::new();
        let mut idf = Vec::new();
        for (term, count) in df.into_iter().filter(|(_, c)| *c >= min_df.max(1)) {
            terms.insert(term, doc_freq.len());
            doc_freq.push(count);
            idf.push(smooth_idf(n, count));
        }
        Ok(Self {
            terms,
            doc_freq,
            corpus_size: n,
            idf,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.get(term).copied()
    }

    pub fn doc_freq(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.doc_freq[i])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i])
    }

    /// idf for a term, treating out-of-vocabulary terms as df = 0.
    pub fn idf_or_unseen(&self, term: &str) -> f64 {
        self.idf(term)
            .unwrap_or_else(|| smooth_idf(self.corpus_size, 0))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    /// Raw `count × idf` vector, not normalized.
    pub fn weights(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for tok in tokenize(text) {
            if let Some(i) = self.index_of(&tok) {
                v[i] += self.idf[i];
            }
        }
        v
    }

    /// L2-normalized TF-IDF vector. Out-of-vocabulary tokens are ignored.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        l2_normalize(&self.weights(text))
    }

    pub fn embed_all(&self, utterances: &[Utterance]) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::new(self.len());
        for u in utterances {
            // ids are unique in validated batches; a repeat just overwrites
            let _ = m.insert(u.id.clone(), self.embed(&u.text));
        }
        m
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let json = serde_json::to_string(self).map_err(|e| EmbeddingError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| EmbeddingError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

fn smooth_idf(n: usize, df: usize) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Dense vectors keyed by utterance id, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    /// Rows get ids "0", "1", ... in order.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        let dim = points.first().map_or(0, Vec::len);
        let mut m = Self::new(dim);
        for (i, p) in points.into_iter().enumerate() {
            m.insert(i.to_string(), p)?;
        }
        Ok(m)
    }

    pub fn insert(&mut self, id: String, row: Vec<f64>) -> Result<(), EmbeddingError> {
        if row.len() != self.dim {
            return Err(EmbeddingError::RowDim {
                id,
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(id));
        }
        match self.index.get(&id) {
            Some(&i) => self.rows[i] = row,
            None => {
                self.index.insert(id.clone(), self.ids.len());
                self.ids.push(id);
                self.rows.push(row);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.rows[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .zip(&self.rows)
            .map(|(id, r)| (id.as_str(), r.as_slice()))
    }

    /// Rows for `ids`, in that order. Returns the first missing id on failure.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self, String> {
        let mut out = Self::new(self.dim);
        for id in ids {
            let id = id.as_ref();
            let row = self.get(id).ok_or_else(|| id.to_string())?;
            out.index.insert(id.to_string(), out.ids.len());
            out.ids.push(id.to_string());
            out.rows.push(row.to_vec());
        }
        Ok(out)
    }

    /// Parse the JSONL embedding format: `{"id": "...", "vector": [...]}` per line.
    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self, EmbeddingError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Line {
            id: String,
            vector: Vec<f64>,
        }
        let mut m: Option<Self> = None;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Line = serde_json::from_str(&line).map_err(|e| EmbeddingError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let m = m.get_or_insert_with(|| Self::new(row.vector.len()));
            if row.vector.len() != m.dim {
                return Err(EmbeddingError::DimMismatch {
                    line: lineno,
                    expected: m.dim,
                    found: row.vector.len(),
                });
            }
            if m.index.contains_key(&row.id) {
                return Err(EmbeddingError::DuplicateId {
                    line: lineno,
                    id: row.id,
                });
            }
            if row.id.is_empty() {
                return Err(EmbeddingError::EmptyId { line: lineno });
            }
            m.insert(row.id, row.vector).map_err(|e| match e {
                EmbeddingError::NonFinite(id) => EmbeddingError::Parse {
                    line: lineno,
                    message: format!("non-finite value in {id:?}"),
                },
                other => other,
            })?;
        }
        Ok(m.unwrap_or_default())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), EmbeddingError> {
        for (id, row) in self.iter() {
            let line = serde_json::json!({ "id": id, "vector": row });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Load a JSONL embedding file.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    EmbeddingMatrix::read_jsonl(File::open(path)?)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<(), EmbeddingError> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    m.write_jsonl(&mut f)?;
    f.flush()?;
    Ok(())
}

/// Parse utterance JSONL (`id`, `text`, optional `label`). Ids must be unique
/// and texts non-empty.
pub fn read_utterances<R: Read>(reader: R) -> Result<Vec<Utterance>, EmbeddingError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(&line).map_err(|e| EmbeddingError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        validate_utterance(&u, lineno, &mut seen)?;
        out.push(u);
    }
    Ok(out)
}

pub(crate) fn validate_utterance(
    u: &Utterance,
    line: usize,
    seen: &mut HashSet<String>,
) -> Result<(), EmbeddingError> {
    if u.id.is_empty() {
        return Err(EmbeddingError::EmptyId { line });
    }
    if u.text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText { line });
    }
    if !seen.insert(u.id.clone()) {
        return Err(EmbeddingError::DuplicateId {
            line,
            id: u.id.clone(),
        });
    }
    Ok(())
}

/// Validate an in-memory batch with the same rules as [`read_utterances`].
/// Line numbers in errors are 1-based positions.
pub fn validate_utterances(batch: &[Utterance]) -> Result<(), EmbeddingError> {
    let mut seen = HashSet::new();
    for (i, u) in batch.iter().enumerate() {
        validate_utterance(u, i + 1, &mut seen)?;
    }
    Ok(())
}

pub fn write_utterances<W: Write>(batch: &[Utterance], mut w: W) -> Result<(), EmbeddingError> {
    for u in batch {
        let line = serde_json::to_string(u).map_err(|e| EmbeddingError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}
