use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{tokenize, Vocabulary};
use crate::linalg::{cosine, mean};

const BUNDLED: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("cluster has no utterances")]
    EmptyCluster,
    #[error("cluster has no content words")]
    NoContent,
    #[error("{utterances} utterances but {pairs} pair lists")]
    LengthMismatch { utterances: usize, pairs: usize },
    #[error("centroid has dimension {found}, vocabulary has {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Verbs,
    VerbRoots,
    Auxiliaries,
    Stopwords,
    Nouns,
}

/// Word lists that drive action-object extraction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    verb_roots: HashMap<String, String>,
    verbs: BTreeSet<String>,
    stopwords: BTreeSet<String>,
    auxiliaries: BTreeSet<String>,
    noun_hints: BTreeSet<String>,
}

impl Lexicon {
    /// The starter lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled lexicon is valid")
    }

    /// Parse the sectioned TSV format: `#verbs`, `#verb_roots` (inflected form,
    /// root), `#auxiliaries`, `#stopwords`, `#nouns`. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, LabelError> {
        let mut lex = Self::default();
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| LabelError::Lexicon { line, message };
            let entry = raw.trim();
            if entry.is_empty() {
                continue;
            }
            if let Some(name) = entry.strip_prefix('#') {
                section = Some(match name.trim() {
                    "verbs" => Section::Verbs,
                    "verb_roots" => Section::VerbRoots,
                    "auxiliaries" => Section::Auxiliaries,
                    "stopwords" => Section::Stopwords,
                    "nouns" => Section::Nouns,
                    other => return Err(err(format!("unknown section {other:?}"))),
                });
                continue;
            }
            if entry.chars().any(char::is_uppercase) {
                return Err(err(format!("{entry:?} is not lowercase")));
            }
            let section = section.ok_or_else(|| err("entry before any section header".into()))?;
            let cols: Vec<&str> = entry.split('\t').map(str::trim).collect();
            match (section, cols.as_slice()) {
                (Section::VerbRoots, [form, root]) if !form.is_empty() && !root.is_empty() => {
                    lex.verb_roots.insert(form.to_string(), root.to_string());
                }
                (Section::VerbRoots, _) => return Err(err("expected two tab-separated columns".into())),
                (_, [word]) => {
                    let set = match section {
                        Section::Verbs => &mut lex.verbs,
                        Section::Auxiliaries => &mut lex.auxiliaries,
                        Section::Stopwords => &mut lex.stopwords,
                        Section::Nouns => &mut lex.noun_hints,
                        Section::VerbRoots => unreachable!(),
                    };
                    set.insert(word.to_string());
                }
                _ => return Err(err("expected a single column".into())),
            }
        }
        lex.check().map_err(|message| LabelError::Lexicon { line: 0, message })?;
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Add every entry of `other`. Fails if the union breaks the
    /// auxiliary/verb separation.
    pub fn extend(&mut self, other: Lexicon) -> Result<(), LabelError> {
        self.verb_roots.extend(other.verb_roots);
        self.verbs.extend(other.verbs);
        self.stopwords.extend(other.stopwords);
        self.auxiliaries.extend(other.auxiliaries);
        self.noun_hints.extend(other.noun_hints);
        self.check().map_err(|message| LabelError::Lexicon { line: 0, message })
    }

    fn check(&self) -> Result<(), String> {
        if let Some(w) = self.auxiliaries.intersection(&self.verbs).next() {
            return Err(format!("{w:?} is listed as both verb and auxiliary"));
        }
        Ok(())
    }

    pub fn is_verb(&self, root: &str) -> bool {
        self.verbs.contains(root)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn is_auxiliary(&self, token: &str) -> bool {
        self.auxiliaries.contains(token)
    }

    pub fn is_noun_hint(&self, token: &str) -> bool {
        self.noun_hints.contains(token)
    }

    /// Stopword or auxiliary.
    pub fn is_function_word(&self, token: &str) -> bool {
        self.is_stopword(token) || self.is_auxiliary(token)
    }

    pub fn verbs(&self) -> impl Iterator<Item = &str> {
        self.verbs.iter().map(String::as_str)
    }

    pub fn verb_roots(&self) -> impl Iterator<Item = (&str, &str)> {
        self.verb_roots.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// "stopp" -> "stop"; doubled l, s, z, f are left alone ("call", "press").
fn undouble(stem: &str) -> &str {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !b"lszf".contains(&b[n - 1]) {
        &stem[..n - 1]
    } else {
        stem
    }
}

/// Reduce a lowercase token to its verb root: known verbs and lexicon entries
/// first, then the suffix rules `-ies`, `-ing`, `-ed`, `-s`.
pub fn normalize_verb(token: &str, lexicon: &Lexicon) -> String {
    if lexicon.verbs.contains(token) {
        return token.to_string();
    }
    if let Some(root) = lexicon.verb_roots.get(token) {
        return root.clone();
    }
    if token.len() >= 5 {
        if let Some(stem) = token.strip_suffix("ies") {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = token.strip_suffix("ing") {
        if stem.len() >= 3 {
            return undouble(stem).to_string();
        }
    }
    if let Some(stem) = token.strip_suffix("ed") {
        if stem.len() >= 3 {
            return undouble(stem).to_string();
        }
    }
    if !token.ends_with("ss") {
        if let Some(stem) = token.strip_suffix('s') {
            if !stem.is_empty() {
                return stem.to_string();
            }
        }
    }
    token.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionObjectPair {
    pub action: String,
    pub object: String,
}

impl ActionObjectPair {
    pub fn new(action: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            action: action.into(),
            object: object.into(),
        }
    }
}

impl fmt::Display for ActionObjectPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.action, self.object)
    }
}

/// Scan left to right for (action, object) pairs. The action is a token whose
/// root is a known verb; its object is the next content token that is not
/// itself a verb (tokens listed as nouns count as objects even when they are
/// also verbs). Scanning resumes after each object.
pub fn extract_action_object<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<ActionObjectPair> {
    let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i];
        i += 1;
        if lexicon.is_function_word(t) {
            continue;
        }
        let root = normalize_verb(t, lexicon);
        if !lexicon.is_verb(&root) {
            continue;
        }
        let object = (i..tokens.len()).find(|&j| {
            let u = tokens[j];
            !lexicon.is_function_word(u) && (!lexicon.is_verb(u) || lexicon.is_noun_hint(u))
        });
        if let Some(j) = object {
            pairs.push(ActionObjectPair::new(root, tokens[j]));
            i = j + 1;
        }
    }
    pairs
}

/// Pairs for raw text.
pub fn extract_from_text(text: &str, lexicon: &Lexicon) -> Vec<ActionObjectPair> {
    extract_action_object(&tokenize(text), lexicon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Pair,
    Keywords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub tokens: Vec<String>,
    pub confidence: f64,
    pub source: LabelSource,
}

impl ClusterLabel {
    pub fn display(&self) -> String {
        self.tokens.join("_")
    }
}

/// Mean L2-normalized TF-IDF vector of the utterances.
pub fn tfidf_centroid<S: AsRef<str>>(utterances: &[S], vocab: &Vocabulary) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = utterances.iter().map(|u| vocab.embed(u.as_ref())).collect();
    if rows.is_empty() {
        return vec![0.0; vocab.len()];
    }
    mean(rows.iter().map(Vec::as_slice), vocab.len())
}

/// Label a cluster by its most frequent action-object pair. Each utterance
/// counts a pair at most once; confidence is the top pair's count over the
/// cluster size. Ties go to the lexicographically smallest pair. Without any
/// pair the label falls back to [`keyword_label`].
pub fn label_cluster<S: AsRef<str>>(
    utterances: &[S],
    pairs: &[Vec<ActionObjectPair>],
    vocab: &Vocabulary,
    centroid: &[f64],
    lexicon: &Lexicon,
) -> Result<ClusterLabel, LabelError> {
    if utterances.is_empty() {
        return Err(LabelError::EmptyCluster);
    }
    if pairs.len() != utterances.len() {
        return Err(LabelError::LengthMismatch {
            utterances: utterances.len(),
            pairs: pairs.len(),
        });
    }
    let mut counts: BTreeMap<&ActionObjectPair, usize> = BTreeMap::new();
    for list in pairs {
        let unique: BTreeSet<&ActionObjectPair> = list.iter().collect();
        for p in unique {
            *counts.entry(p).or_default() += 1;
        }
    }
    // BTreeMap iterates in pair order, so the first maximum is the tie winner
    let mut top: Option<(&ActionObjectPair, usize)> = None;
    for (p, c) in counts {
        if top.is_none_or(|(_, best)| c > best) {
            top = Some((p, c));
        }
    }
    match top {
        Some((p, c)) => Ok(ClusterLabel {
            tokens: vec![p.action.clone(), p.object.clone()],
            confidence: c as f64 / utterances.len() as f64,
            source: LabelSource::Pair,
        }),
        None => keyword_label(utterances, vocab, centroid, lexicon),
    }
}

/// The two highest-scoring content words (cluster term frequency × idf, ties
/// lexicographic). Confidence is the cosine between the TF-IDF embedding of
/// the keywords and `centroid`, clamped to [0, 1].
pub fn keyword_label<S: AsRef<str>>(
    utterances: &[S],
    vocab: &Vocabulary,
    centroid: &[f64],
    lexicon: &Lexicon,
) -> Result<ClusterLabel, LabelError> {
    if utterances.is_empty() {
        return Err(LabelError::EmptyCluster);
    }
    if centroid.len() != vocab.len() {
        return Err(LabelError::DimMismatch {
            expected: vocab.len(),
            found: centroid.len(),
        });
    }
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for u in utterances {
        for t in tokenize(u.as_ref()) {
            if !lexicon.is_function_word(&t) {
                *tf.entry(t).or_default() += 1;
            }
        }
    }
    if tf.is_empty() {
        return Err(LabelError::NoContent);
    }
    let mut scored: Vec<(f64, String)> = tf
        .into_iter()
        .map(|(t, c)| (c as f64 * vocab.idf_or_unseen(&t), t))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let tokens: Vec<String> = scored.into_iter().take(2).map(|(_, t)| t).collect();
    let confidence = cosine(&vocab.embed(&tokens.join(" ")), centroid).clamp(0.0, 1.0);
    Ok(ClusterLabel {
        tokens,
        confidence,
        source: LabelSource::Keywords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn verb_rooting() {
        let lex = Lexicon::bundled();
        assert_eq!(normalize_verb("booking", &lex), "book");
        assert_eq!(normalize_verb("cancelled", &lex), "cancel");
        assert_eq!(normalize_verb("pass", &lex), "pass");
        let empty = Lexicon::default();
        assert_eq!(normalize_verb("booking", &empty), "book");
        assert_eq!(normalize_verb("stopping", &empty), "stop");
        assert_eq!(normalize_verb("calling", &empty), "call");
        assert_eq!(normalize_verb("queries", &empty), "query");
        assert_eq!(normalize_verb("opened", &empty), "open");
        assert_eq!(normalize_verb("sing", &empty), "sing");
        assert_eq!(normalize_verb("pass", &empty), "pass");
    }

    #[test]
    fn pairs_from_examples() {
        let lex = Lexicon::bundled();
        assert_eq!(
            extract_action_object(&toks("i want to book a flight to boston"), &lex),
            [ActionObjectPair::new("book", "flight")]
        );
        assert_eq!(
            extract_action_object(&toks("cancel my booking and book a hotel"), &lex),
            [
                ActionObjectPair::new("cancel", "booking"),
                ActionObjectPair::new("book", "hotel")
            ]
        );
        assert!(extract_action_object(&toks("what is the weather"), &lex).is_empty());
        assert_eq!(
            extract_action_object(&toks("please help me reset my password"), &lex),
            [ActionObjectPair::new("reset", "password")]
        );
    }

    fn fixture_vocab(docs: &[&str]) -> (Vocabulary, Vec<f64>) {
        let v = Vocabulary::fit(docs, 1).unwrap();
        let c = tfidf_centroid(docs, &v);
        (v, c)
    }

    #[test]
    fn label_by_top_pair() {
        let lex = Lexicon::bundled();
        let mut utts = vec!["book a flight"; 7];
        utts.extend(["cancel my order", "show my balance", "hello there"]);
        let pairs: Vec<_> = utts.iter().map(|u| extract_from_text(u, &lex)).collect();
        let (v, c) = fixture_vocab(&utts);
        let l = label_cluster(&utts, &pairs, &v, &c, &lex).unwrap();
        assert_eq!(l.display(), "book_flight");
        assert_abs_diff_eq!(l.confidence, 0.7, epsilon = 1e-12);
        assert_eq!(l.source, LabelSource::Pair);
    }

    #[test]
    fn pair_ties_are_lexicographic() {
        let lex = Lexicon::bundled();
        let mut utts = vec!["cancel flight"; 5];
        utts.extend(vec!["book flight"; 5]);
        let pairs: Vec<_> = utts.iter().map(|u| extract_from_text(u, &lex)).collect();
        let (v, c) = fixture_vocab(&utts);
        let l = label_cluster(&utts, &pairs, &v, &c, &lex).unwrap();
        assert_eq!(l.display(), "book_flight");
        assert_abs_diff_eq!(l.confidence, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pairless_cluster_falls_back() {
        let lex = Lexicon::bundled();
        let utts = ["weather in paris", "weather tomorrow"];
        let pairs = vec![vec![], vec![]];
        let (v, c) = fixture_vocab(&utts);
        let l = label_cluster(&utts, &pairs, &v, &c, &lex).unwrap();
        assert_eq!(l.source, LabelSource::Keywords);
        assert_eq!(l.tokens[0], "weather");
    }

    #[test]
    fn keyword_scores() {
        let lex = Lexicon::bundled();
        let utts = ["flight flight delay", "flight delay"];
        let (v, c) = fixture_vocab(&utts);
        // both terms appear in every document, so idf = 1 and tf decides: 3 vs 2
        let l = keyword_label(&utts, &v, &c, &lex).unwrap();
        assert_eq!(l.tokens, ["flight", "delay"]);

        let single = ["refund"];
        let (v, c) = fixture_vocab(&single);
        let l = keyword_label(&single, &v, &c, &lex).unwrap();
        assert_eq!(l.tokens, ["refund"]);
        assert_abs_diff_eq!(l.confidence, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn keyword_errors() {
        let lex = Lexicon::bundled();
        let v = Vocabulary::fit(&["the a"], 1).unwrap();
        let c = vec![0.0; v.len()];
        assert!(matches!(keyword_label(&["the a"], &v, &c, &lex), Err(LabelError::NoContent)));
        let none: [&str; 0] = [];
        assert!(matches!(keyword_label(&none, &v, &c, &lex), Err(LabelError::EmptyCluster)));
        assert!(matches!(
            label_cluster(&none, &[], &v, &c, &lex),
            Err(LabelError::EmptyCluster)
        ));
    }

    #[test]
    fn lexicon_parse_errors() {
        let e = Lexicon::parse("#verbs\nbook\n#auxiliaries\nbook\n").unwrap_err();
        assert!(e.to_string().contains("both verb and auxiliary"));
        let e = Lexicon::parse("#verbs\nBook\n").unwrap_err();
        assert!(matches!(e, LabelError::Lexicon { line: 2, .. }));
        let e = Lexicon::parse("book\n").unwrap_err();
        assert!(matches!(e, LabelError::Lexicon { line: 1, .. }));
        let e = Lexicon::parse("#verb_roots\nbooked\n").unwrap_err();
        assert!(matches!(e, LabelError::Lexicon { line: 2, .. }));
        assert!(Lexicon::parse("#colors\n").is_err());
    }

    #[test]
    fn bundled_lexicon_shape() {
        let lex = Lexicon::bundled();
        assert!(lex.verbs.len() >= 150);
        assert!(lex.auxiliaries.len() >= 40);
        for w in ["want", "need", "like", "please", "would", "could", "can", "to", "is", "are"] {
            assert!(lex.is_auxiliary(w), "{w}");
        }
        for (_, root) in lex.verb_roots() {
            assert!(lex.is_verb(root), "{root}");
        }
    }
}
