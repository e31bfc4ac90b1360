use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum NormalizationError {
    #[error("synonym lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("label has no tokens")]
    EmptyLabel,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Singular form under a small set of English suffix rules. Idempotent.
pub fn singularize(token: &str) -> String {
    if token.ends_with("ss") {
        return token.to_string();
    }
    if token.len() >= 5 {
        if let Some(stem) = token.strip_suffix("ies") {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = token.strip_suffix("lves") {
        return format!("{stem}lf");
    }
    if let Some(stem) = token.strip_suffix("eaves") {
        return format!("{stem}eaf");
    }
    if let Some(stem) = token.strip_suffix("es") {
        if stem.ends_with('s') && (stem.ends_with("ss") || stem.ends_with("us") || stem.ends_with("is")) {
            return stem.to_string();
        }
    }
    if token.len() > 3 && !token.ends_with("us") && !token.ends_with("is") {
        if let Some(stem) = token.strip_suffix('s') {
            return stem.to_string();
        }
    }
    token.to_string()
}

/// Flat term → canonical term map. Canonical terms are singular and map to
/// themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymLexicon {
    canonical_of: HashMap<String, String>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse `term<TAB>canonical` lines. Blank lines and lines starting with
    /// `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, NormalizationError> {
        let mut map: HashMap<String, (String, usize)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| NormalizationError::Lexicon { line, message };
            let entry = raw.trim();
            if entry.is_empty() || entry.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = entry.split('\t').map(str::trim).collect();
            let [term, canonical] = cols.as_slice() else {
                return Err(err("expected two tab-separated columns".into()));
            };
            if term.is_empty() || canonical.is_empty() {
                return Err(err("empty column".into()));
            }
            if entry.chars().any(char::is_uppercase) {
                return Err(err(format!("{entry:?} is not lowercase")));
            }
            if singularize(canonical) != *canonical {
                return Err(err(format!("canonical term {canonical:?} is not singular")));
            }
            if let Some((prev, _)) = map.get(*term) {
                if prev != canonical {
                    return Err(err(format!("{term:?} already maps to {prev:?}")));
                }
            }
            map.insert(term.to_string(), (canonical.to_string(), line));
        }
        for (term, (canonical, line)) in &map {
            if let Some((target, _)) = map.get(canonical) {
                if target != canonical {
                    return Err(NormalizationError::Lexicon {
                        line: *line,
                        message: format!(
                            "{term:?} maps to {canonical:?}, which itself maps to {target:?}"
                        ),
                    });
                }
            }
        }
        Ok(Self {
            canonical_of: map.into_iter().map(|(k, (v, _))| (k, v)).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, NormalizationError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self, NormalizationError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let text: String = pairs
            .into_iter()
            .map(|(a, b)| format!("{}\t{}\n", a.as_ref(), b.as_ref()))
            .collect();
        Self::parse(&text)
    }

    pub fn canonical<'a>(&'a self, term: &'a str) -> &'a str {
        self.canonical_of.get(term).map_or(term, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.canonical_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical_of.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalLabel {
    pub tokens: Vec<String>,
    pub display: String,
}

/// Singularize and synonym-map each token, then sort and deduplicate.
pub fn canonicalize_label<S: AsRef<str>>(
    label: &[S],
    synonyms: &SynonymLexicon,
) -> Result<CanonicalLabel, NormalizationError> {
    let mut tokens: Vec<String> = label
        .iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .map(|t| synonyms.canonical(&singularize(&t)).to_string())
        .collect();
    if tokens.is_empty() {
        return Err(NormalizationError::EmptyLabel);
    }
    tokens.sort();
    tokens.dedup();
    let display = tokens.join("_");
    Ok(CanonicalLabel { tokens, display })
}

/// Split a label string such as `"book_flights"` into its tokens.
pub fn label_tokens(label: &str) -> Vec<String> {
    tokenize(label)
}

/// Canonical form of a label string.
pub fn canonicalize_str(label: &str, synonyms: &SynonymLexicon) -> Result<CanonicalLabel, NormalizationError> {
    canonicalize_label(&label_tokens(label), synonyms)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGroup {
    pub canonical: String,
    pub members: Vec<String>,
}

/// Partition labels by canonical display. Groups appear in order of their
/// first member; members keep input order. Labels without tokens share the
/// empty key.
pub fn merge_labels<S: AsRef<str>>(labels: &[S], synonyms: &SynonymLexicon) -> Vec<LabelGroup> {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut groups: Vec<LabelGroup> = Vec::new();
    for label in labels {
        let key = canonicalize_str(label.as_ref(), synonyms)
            .map(|c| c.display)
            .unwrap_or_default();
        let g = *index.entry(key.clone()).or_insert_with(|| {
            groups.push(LabelGroup {
                canonical: key,
                members: Vec::new(),
            });
            groups.len() - 1
        });
        groups[g].members.push(label.as_ref().to_string());
    }
    groups
}
