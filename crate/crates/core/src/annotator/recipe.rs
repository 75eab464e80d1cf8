//! Training recipes: which sources supply positives and negatives, and how
//! many examples each contributes.
//!
//! The four named recipes carry their reference example counts; desk-scale
//! runs use [`TrainingRecipe::scaled`] to shrink them proportionally.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AnnotatorError, AnnotatorMode, REGRESSION_MAX};
use crate::corpus::{ingest_shard, ErrorPolicy, LanguageSet, Tokenizer};
use crate::hashing::{derive_seed, seeded_shuffle_by, ContentHasher};
use crate::io::{read_jsonl, JsonlError};

pub const ANN_EDU_LABELS: usize = 400_000;
pub const ANN_INS_EDU: usize = 100_000;
pub const ANN_INS_INSTRUCT: usize = 100_000;
pub const ANN_HQ_FILES: usize = 220_000;
pub const ANN_BEST_HQ: usize = 220_000;
pub const ANN_BEST_INSTRUCT: usize = 80_000;
/// Minimum educational score for documents bootstrapped into Ann-INS.
pub const EDU_BOOTSTRAP_MIN_SCORE: f64 = 3.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RecipeName {
    AnnEdu,
    AnnIns,
    AnnHq,
    AnnBest,
    Custom(String),
}

impl RecipeName {
    pub fn as_str(&self) -> &str {
        match self {
            RecipeName::AnnEdu => "Ann-EDU",
            RecipeName::AnnIns => "Ann-INS",
            RecipeName::AnnHq => "Ann-HQ",
            RecipeName::AnnBest => "Ann-BEST",
            RecipeName::Custom(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "ANN-EDU" => RecipeName::AnnEdu,
            "ANN-INS" => RecipeName::AnnIns,
            "ANN-HQ" => RecipeName::AnnHq,
            "ANN-BEST" => RecipeName::AnnBest,
            _ => RecipeName::Custom(s.to_string()),
        }
    }
}

impl fmt::Display for RecipeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for RecipeName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RecipeName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(RecipeName::parse(&String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    Binary,
    #[serde(rename = "ordinal-0-5")]
    Ordinal0To5,
}

impl LabelKind {
    pub fn mode(self) -> AnnotatorMode {
        match self {
            LabelKind::Binary => AnnotatorMode::Classification,
            LabelKind::Ordinal0To5 => AnnotatorMode::Regression,
        }
    }
}

/// Where a source's texts come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceKind {
    /// Record-per-line file with a `text` (or `content`) field and an
    /// optional `id`.
    Texts { path: PathBuf },
    /// A corpus shard; every document is eligible.
    Corpus { path: PathBuf },
    /// Corpus documents whose label-file score is at least `min_score`.
    ScoredCorpus {
        path: PathBuf,
        labels: PathBuf,
        min_score: f64,
    },
    /// Corpus documents with ordinal labels from a label file.
    Labeled { path: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub count: usize,
    #[serde(flatten)]
    pub kind: SourceKind,
}

impl SourceSpec {
    pub fn new(name: impl Into<String>, count: usize, kind: SourceKind) -> Self {
        Self {
            name: name.into(),
            count,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecipe {
    pub name: RecipeName,
    pub label_kind: LabelKind,
    pub positives: Vec<SourceSpec>,
    #[serde(default)]
    pub negatives: Option<SourceSpec>,
}

impl TrainingRecipe {
    /// Regression over educational-value labels.
    pub fn ann_edu(corpus: &Path, labels: &Path) -> Self {
        Self {
            name: RecipeName::AnnEdu,
            label_kind: LabelKind::Ordinal0To5,
            positives: vec![SourceSpec::new(
                "edu-labels",
                ANN_EDU_LABELS,
                SourceKind::Labeled {
                    path: corpus.into(),
                    labels: labels.into(),
                },
            )],
            negatives: None,
        }
    }

    /// High-scoring educational documents plus instruction data.
    pub fn ann_ins(corpus: &Path, edu_labels: &Path, instruct: &Path, negatives: &Path) -> Self {
        Self::binary(
            RecipeName::AnnIns,
            vec![
                SourceSpec::new(
                    "edu-bootstrap",
                    ANN_INS_EDU,
                    SourceKind::ScoredCorpus {
                        path: corpus.into(),
                        labels: edu_labels.into(),
                        min_score: EDU_BOOTSTRAP_MIN_SCORE,
                    },
                ),
                SourceSpec::new(
                    "instruct",
                    ANN_INS_INSTRUCT,
                    SourceKind::Texts {
                        path: instruct.into(),
                    },
                ),
            ],
            negatives,
        )
    }

    /// High-quality code files only.
    pub fn ann_hq(hq: &Path, negatives: &Path) -> Self {
        Self::binary(
            RecipeName::AnnHq,
            vec![SourceSpec::new(
                "hq-files",
                ANN_HQ_FILES,
                SourceKind::Texts { path: hq.into() },
            )],
            negatives,
        )
    }

    /// High-quality code files mixed with instruction data.
    pub fn ann_best(hq: &Path, instruct: &Path, negatives: &Path) -> Self {
        Self::binary(
            RecipeName::AnnBest,
            vec![
                SourceSpec::new("hq-files", ANN_BEST_HQ, SourceKind::Texts { path: hq.into() }),
                SourceSpec::new(
                    "instruct",
                    ANN_BEST_INSTRUCT,
                    SourceKind::Texts {
                        path: instruct.into(),
                    },
                ),
            ],
            negatives,
        )
    }

    /// Binary recipe with random corpus negatives, as many as positives.
    pub fn binary(name: RecipeName, positives: Vec<SourceSpec>, negatives: &Path) -> Self {
        let total = positives.iter().map(|p| p.count).sum();
        Self {
            name,
            label_kind: LabelKind::Binary,
            positives,
            negatives: Some(SourceSpec::new(
                "random-corpus",
                total,
                SourceKind::Corpus {
                    path: negatives.into(),
                },
            )),
        }
    }

    pub fn positive_count(&self) -> usize {
        self.positives.iter().map(|p| p.count).sum()
    }

    /// Multiply every source count by `factor` (at least one example each).
    pub fn scaled(mut self, factor: f64) -> Self {
        let scale = |c: usize| ((c as f64 * factor).round() as usize).max(1);
        for p in &mut self.positives {
            p.count = scale(p.count);
        }
        if let Some(n) = &mut self.negatives {
            n.count = scale(n.count);
        }
        self
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.field(&serde_json::to_vec(self).expect("recipe serializes"));
        h.finish_hex()
    }

    pub fn validate(&self) -> Result<(), AnnotatorError> {
        if self.positives.is_empty() || self.positive_count() == 0 {
            return Err(AnnotatorError::Config(format!("recipe {} has no positives", self.name)));
        }
        match self.label_kind {
            LabelKind::Binary => {
                match &self.negatives {
                    Some(n) if n.count > 0 => {}
                    _ => {
                        return Err(AnnotatorError::Config(format!(
                            "classification recipe {} needs negatives",
                            self.name
                        )))
                    }
                }
                if self
                    .positives
                    .iter()
                    .any(|p| matches!(p.kind, SourceKind::Labeled { .. }))
                {
                    return Err(AnnotatorError::Config(
                        "labeled sources belong to ordinal recipes".into(),
                    ));
                }
            }
            LabelKind::Ordinal0To5 => {
                if self
                    .positives
                    .iter()
                    .any(|p| !matches!(p.kind, SourceKind::Labeled { .. }))
                {
                    return Err(AnnotatorError::Config(
                        "ordinal recipes take only labeled sources".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Load and sample every source. Sampling is a seeded ordering by
    /// example id, so it does not depend on file order.
    pub fn resolve(&self, seed: u64, languages: &LanguageSet) -> Result<TrainingSet, AnnotatorError> {
        self.validate()?;
        let mut examples = Vec::new();
        for (i, src) in self.positives.iter().enumerate() {
            let label = (self.label_kind == LabelKind::Binary).then_some(1.0);
            examples.extend(sample_source(src, label, derive_seed(seed, "positives", i as u64), languages)?);
        }
        if let Some(neg) = &self.negatives {
            examples.extend(sample_source(neg, Some(0.0), derive_seed(seed, "negatives", 0), languages)?);
        }
        let set = TrainingSet {
            mode: self.label_kind.mode(),
            examples,
        };
        set.validate()?;
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub mode: AnnotatorMode,
    pub examples: Vec<LabeledExample>,
}

impl TrainingSet {
    pub fn validate(&self) -> Result<(), AnnotatorError> {
        if self.examples.is_empty() {
            return Err(AnnotatorError::Config("training set is empty".into()));
        }
        match self.mode {
            AnnotatorMode::Classification => {
                let (p, n) = self.class_counts();
                if p == 0 || n == 0 {
                    return Err(AnnotatorError::Config(format!(
                        "classification needs both classes (positives {p}, negatives {n})"
                    )));
                }
                if let Some(e) = self.examples.iter().find(|e| e.label != 0.0 && e.label != 1.0) {
                    return Err(AnnotatorError::Config(format!(
                        "binary label {} for {} is not 0 or 1",
                        e.label, e.id
                    )));
                }
            }
            AnnotatorMode::Regression => {
                if let Some(e) = self
                    .examples
                    .iter()
                    .find(|e| !(0.0..=REGRESSION_MAX).contains(&e.label))
                {
                    return Err(AnnotatorError::Config(format!(
                        "ordinal label {} for {} outside [0, 5]",
                        e.label, e.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(positives, negatives)` for classification; `(n, 0)` for regression.
    pub fn class_counts(&self) -> (usize, usize) {
        match self.mode {
            AnnotatorMode::Classification => {
                let p = self.examples.iter().filter(|e| e.label > 0.5).count();
                (p, self.examples.len() - p)
            }
            AnnotatorMode::Regression => (self.examples.len(), 0),
        }
    }

    pub fn ids(&self) -> HashSet<String> {
        self.examples.iter().map(|e| e.id.clone()).collect()
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for e in &self.examples {
            h.field(e.id.as_bytes())
                .field(e.text.as_bytes())
                .update(&e.label.to_le_bytes());
        }
        h.finish_hex()
    }
}

#[derive(Deserialize)]
struct TextRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct LabelRecord {
    doc_id: String,
    score: f64,
}

fn jsonl_err(e: JsonlError) -> AnnotatorError {
    match e {
        JsonlError::Io { path, source } => AnnotatorError::Io { path, source },
        JsonlError::Record {
            path,
            line,
            message,
        } => AnnotatorError::Format {
            path,
            message: format!("line {line}: {message}"),
        },
    }
}

/// Record-per-line `(doc_id, score)` labels with scores in `[0, 5]`.
pub fn load_edu_labels(path: &Path) -> Result<HashMap<String, f64>, AnnotatorError> {
    let recs: Vec<LabelRecord> = read_jsonl(path).map_err(jsonl_err)?;
    let mut out = HashMap::with_capacity(recs.len());
    for r in recs {
        if !(0.0..=REGRESSION_MAX).contains(&r.score) {
            return Err(AnnotatorError::Format {
                path: path.to_path_buf(),
                message: format!("score {} for {} outside [0, 5]", r.score, r.doc_id),
            });
        }
        if out.insert(r.doc_id.clone(), r.score).is_some() {
            return Err(AnnotatorError::DuplicateId(r.doc_id));
        }
    }
    Ok(out)
}

fn load_texts(path: &Path, source: &str) -> Result<Vec<(String, String)>, AnnotatorError> {
    let recs: Vec<TextRecord> = read_jsonl(path).map_err(jsonl_err)?;
    recs.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let text = r.text.or(r.content).ok_or_else(|| AnnotatorError::Format {
                path: path.to_path_buf(),
                message: format!("record {} has neither `text` nor `content`", i + 1),
            })?;
            Ok((r.id.unwrap_or_else(|| format!("{source}:{}", i + 1)), text))
        })
        .collect()
}

fn load_corpus(path: &Path, languages: &LanguageSet) -> Result<Vec<(String, String)>, AnnotatorError> {
    let out = ingest_shard(path, languages, &Tokenizer::approximate(), ErrorPolicy::FailFast)
        .map_err(|e| AnnotatorError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(out.documents.into_iter().map(|d| (d.id, d.content)).collect())
}

fn sample_source(
    src: &SourceSpec,
    binary_label: Option<f64>,
    seed: u64,
    languages: &LanguageSet,
) -> Result<Vec<LabeledExample>, AnnotatorError> {
    let mut items: Vec<LabeledExample> = match &src.kind {
        SourceKind::Texts { path } => load_texts(path, &src.name)?
            .into_iter()
            .map(|(id, text)| LabeledExample { id, text, label: 0.0 })
            .collect(),
        SourceKind::Corpus { path } => load_corpus(path, languages)?
            .into_iter()
            .map(|(id, text)| LabeledExample { id, text, label: 0.0 })
            .collect(),
        SourceKind::ScoredCorpus {
            path,
            labels,
            min_score,
        } => {
            let scores = load_edu_labels(labels)?;
            load_corpus(path, languages)?
                .into_iter()
                .filter(|(id, _)| scores.get(id).is_some_and(|s| s >= min_score))
                .map(|(id, text)| LabeledExample { id, text, label: 0.0 })
                .collect()
        }
        SourceKind::Labeled { path, labels } => {
            let scores = load_edu_labels(labels)?;
            load_corpus(path, languages)?
                .into_iter()
                .filter_map(|(id, text)| {
                    scores.get(&id).map(|&s| LabeledExample { id, text, label: s })
                })
                .collect()
        }
    };
    if let Some(l) = binary_label {
        items.iter_mut().for_each(|e| e.label = l);
    }
    if items.len() < src.count {
        log::warn!(
            "source {} has {} examples, fewer than the requested {}; using all",
            src.name,
            items.len(),
            src.count
        );
    }
    seeded_shuffle_by(&mut items, seed, |e| e.id.as_str());
    items.truncate(src.count);
    Ok(items)
}
