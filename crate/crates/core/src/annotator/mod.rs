//! Model-based quality annotator.
//!
//! A linear head over hashed n-gram features, trained either as a binary
//! classifier (good code vs. random corpus documents) or as a 0–5
//! regressor over externally supplied educational-value labels. Long files
//! are scored as the mean over top, middle and bottom chunks.

mod chunk;
mod embedding;
mod features;
mod recipe;
mod train;

pub use chunk::ChunkPolicy;
pub use embedding::{import_embedding_scores, score_embeddings, EmbeddingHead, EmbeddingRecord};
pub use features::{featurize, FeatureSpec, FeatureVector};
pub use recipe::{
    load_edu_labels, LabelKind, LabeledExample, RecipeName, SourceKind, SourceSpec, TrainingRecipe,
    TrainingSet, ANN_BEST_HQ, ANN_BEST_INSTRUCT, ANN_EDU_LABELS, ANN_HQ_FILES, ANN_INS_EDU,
    ANN_INS_INSTRUCT, EDU_BOOTSTRAP_MIN_SCORE,
};
pub use train::{
    averaging_start, dloss, epoch_order, loss, objective, sigmoid, train_linear, Hyperparameters,
    TrainError, TrainedLinear,
};

use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CodeDocument, ScoreRecord};
use crate::hashing::ContentHasher;
use crate::io::{read_all, AtomicFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorMode {
    Classification,
    Regression,
}

pub const REGRESSION_MAX: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum AnnotatorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("dimension mismatch for {id}: expected {expected}, got {got}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Hashes that tie a model to the data and settings it was trained from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub training_data_hash: String,
    pub recipe_hash: String,
    pub positives: usize,
    pub negatives: usize,
    pub hyperparameters: Option<Hyperparameters>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorModel {
    pub mode: AnnotatorMode,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_spec: FeatureSpec,
    pub chunk_policy: ChunkPolicy,
    pub recipe_name: RecipeName,
    pub provenance: Provenance,
    pub loss_trace: Vec<f64>,
}

impl AnnotatorModel {
    /// An untrained model: all weights and the bias are zero.
    pub fn zeros(mode: AnnotatorMode, feature_spec: FeatureSpec, chunk_policy: ChunkPolicy) -> Self {
        Self {
            mode,
            weights: vec![0.0; feature_spec.dim()],
            bias: 0.0,
            feature_spec,
            chunk_policy,
            recipe_name: RecipeName::Custom("untrained".into()),
            provenance: Provenance::default(),
            loss_trace: Vec::new(),
        }
    }

    pub fn margin(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    /// Map a margin into the model's output range.
    pub fn output(&self, margin: f64) -> f64 {
        match self.mode {
            AnnotatorMode::Classification => sigmoid(margin),
            AnnotatorMode::Regression => margin.clamp(0.0, REGRESSION_MAX),
        }
    }

    /// Score a single chunk of text (no chunking).
    pub fn score_chunk(&self, text: &str) -> f64 {
        self.output(self.margin(&featurize(text, &self.feature_spec)))
    }

    /// Mean of the per-chunk outputs under the model's chunk policy.
    pub fn score_text(&self, content: &str) -> f64 {
        let chunks = self.chunk_policy.chunks(content);
        let total: f64 = chunks.iter().map(|c| self.score_chunk(c)).sum();
        total / chunks.len() as f64
    }

    pub fn score_document(&self, doc: &CodeDocument) -> f64 {
        self.score_text(&doc.content)
    }
}

/// Score every document. Output is sorted by doc id, so it does not depend
/// on `workers`.
pub fn score_corpus(
    model: &AnnotatorModel,
    docs: &[CodeDocument],
    workers: usize,
) -> Result<Vec<ScoreRecord>, AnnotatorError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AnnotatorError::Config(e.to_string()))?;
    let mut out: Vec<ScoreRecord> = pool.install(|| {
        docs.par_iter()
            .map(|d| ScoreRecord {
                doc_id: d.id.clone(),
                language: d.language.clone(),
                score: model.score_document(d),
                token_count: d.token_count,
            })
            .collect()
    });
    out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(out)
}

/// Featurize every chunk of every example. Each chunk becomes one training
/// row carrying its example's label.
fn expand_examples(
    set: &TrainingSet,
    spec: &FeatureSpec,
    policy: &ChunkPolicy,
) -> (Vec<FeatureVector>, Vec<f64>) {
    let rows: Vec<Vec<(FeatureVector, f64)>> = set
        .examples
        .par_iter()
        .map(|ex| {
            policy
                .chunks(&ex.text)
                .into_iter()
                .map(|c| (featurize(c, spec), ex.label))
                .collect()
        })
        .collect();
    rows.into_iter().flatten().unzip()
}

/// Train an annotator on a resolved training set.
pub fn train_annotator(
    set: &TrainingSet,
    recipe_name: RecipeName,
    feature_spec: &FeatureSpec,
    chunk_policy: &ChunkPolicy,
    hyper: &Hyperparameters,
) -> Result<AnnotatorModel, AnnotatorError> {
    feature_spec.validate().map_err(AnnotatorError::Config)?;
    set.validate()?;
    let (features, labels) = expand_examples(set, feature_spec, chunk_policy);
    let trained = train_linear(set.mode, &features, &labels, feature_spec.dim(), hyper)?;
    let (positives, negatives) = set.class_counts();
    Ok(AnnotatorModel {
        mode: set.mode,
        weights: trained.weights,
        bias: trained.bias,
        feature_spec: feature_spec.clone(),
        chunk_policy: *chunk_policy,
        recipe_name,
        provenance: Provenance {
            training_data_hash: set.content_hash(),
            recipe_hash: String::new(),
            positives,
            negatives,
            hyperparameters: Some(hyper.clone()),
        },
        loss_trace: trained.loss_trace,
    })
}

const MODEL_MAGIC: &[u8; 6] = b"CCANN\0";
const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    mode: AnnotatorMode,
    dim: usize,
    bias: f64,
    feature_spec: FeatureSpec,
    chunk_policy: ChunkPolicy,
    recipe_name: RecipeName,
    provenance: Provenance,
    loss_trace: Vec<f64>,
    weights_sha256: String,
}

fn weights_digest(weights: &[f64]) -> String {
    let mut h = ContentHasher::new();
    for w in weights {
        h.update(&w.to_le_bytes());
    }
    h.finish_hex()
}

impl AnnotatorModel {
    /// Binary container: magic, u16 version, u64 header length, JSON header,
    /// then `dim` little-endian f64 weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            mode: self.mode,
            dim: self.weights.len(),
            bias: self.bias,
            feature_spec: self.feature_spec.clone(),
            chunk_policy: self.chunk_policy,
            recipe_name: self.recipe_name.clone(),
            provenance: self.provenance.clone(),
            loss_trace: self.loss_trace.clone(),
            weights_sha256: weights_digest(&self.weights),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.weights.len() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| "truncated model file")?;
        if &magic != MODEL_MAGIC {
            return Err("not an annotator model file".into());
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v).map_err(|_| "truncated model file")?;
        let version = u16::from_le_bytes(v);
        if version != MODEL_VERSION {
            return Err(format!("unsupported model version {version}"));
        }
        let mut l = [0u8; 8];
        r.read_exact(&mut l).map_err(|_| "truncated model file")?;
        let hlen = u64::from_le_bytes(l) as usize;
        if r.len() < hlen {
            return Err("truncated model header".into());
        }
        let header: ModelHeader =
            serde_json::from_slice(&r[..hlen]).map_err(|e| format!("bad model header: {e}"))?;
        let body = &r[hlen..];
        if body.len() != header.dim * 8 {
            return Err(format!(
                "weight block has {} bytes, expected {}",
                body.len(),
                header.dim * 8
            ));
        }
        if header.dim != header.feature_spec.dim() {
            return Err("weight dimension disagrees with feature spec".into());
        }
        let weights: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if weights_digest(&weights) != header.weights_sha256 {
            return Err("weight checksum mismatch".into());
        }
        Ok(Self {
            mode: header.mode,
            weights,
            bias: header.bias,
            feature_spec: header.feature_spec,
            chunk_policy: header.chunk_policy,
            recipe_name: header.recipe_name,
            provenance: header.provenance,
            loss_trace: header.loss_trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotatorError> {
        let io_err = |source| AnnotatorError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = AtomicFile::create(path).map_err(io_err)?;
        f.write_all(&self.to_bytes()).map_err(io_err)?;
        f.commit().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, AnnotatorError> {
        let bytes = read_all(path).map_err(|source| AnnotatorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|message| AnnotatorError::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguageTag, Tokenizer};

    fn small_spec() -> FeatureSpec {
        FeatureSpec {
            dim_log2: 12,
            ..Default::default()
        }
    }

    fn doc(id: &str, content: &str) -> CodeDocument {
        CodeDocument::new(
            Some(id.into()),
            "r",
            "f.py",
            LanguageTag::python(),
            content,
            &Tokenizer::approximate(),
        )
    }

    fn separable_set() -> TrainingSet {
        let mut examples = Vec::new();
        for i in 0..40 {
            examples.push(LabeledExample {
                id: format!("p{i}"),
                text: format!("def solve_{i}(xs):\n    \"\"\"quality_marker\"\"\"\n    return sorted(xs)[{i}]\n"),
                label: 1.0,
            });
            examples.push(LabeledExample {
                id: format!("n{i}"),
                text: format!("x{i} = {i}\nprint(x{i})\n"),
                label: 0.0,
            });
        }
        TrainingSet {
            mode: AnnotatorMode::Classification,
            examples,
        }
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = AnnotatorModel::zeros(AnnotatorMode::Classification, small_spec(), ChunkPolicy::default());
        assert_eq!(m.score_document(&doc("a", "anything at all")), 0.5);
        assert_eq!(m.score_document(&doc("b", &"y".repeat(9000))), 0.5);
    }

    #[test]
    fn separable_training_reaches_full_accuracy() {
        let set = separable_set();
        let m = train_annotator(
            &set,
            RecipeName::Custom("toy".into()),
            &small_spec(),
            &ChunkPolicy::default(),
            &Hyperparameters::default(),
        )
        .unwrap();
        let correct = set
            .examples
            .iter()
            .filter(|e| (m.score_text(&e.text) > 0.5) == (e.label > 0.5))
            .count();
        assert_eq!(correct, set.examples.len());
        assert_eq!(m.provenance.positives, 40);
        assert_eq!(m.provenance.negatives, 40);
        assert_eq!(m.loss_trace.len(), 3);
    }

    #[test]
    fn empty_class_is_configuration_error() {
        let mut set = separable_set();
        set.examples.retain(|e| e.label > 0.5);
        let err = train_annotator(
            &set,
            RecipeName::AnnHq,
            &small_spec(),
            &ChunkPolicy::default(),
            &Hyperparameters::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AnnotatorError::Config(_)));
    }

    #[test]
    fn short_document_equals_single_chunk_score() {
        let set = separable_set();
        let m = train_annotator(
            &set,
            RecipeName::AnnBest,
            &small_spec(),
            &ChunkPolicy::default(),
            &Hyperparameters::default(),
        )
        .unwrap();
        let text = "def f():\n    return 1\n".repeat(20);
        assert!(text.chars().count() <= 2000);
        assert_eq!(m.score_text(&text), m.score_chunk(&text));
    }

    #[test]
    fn model_file_roundtrip_and_corruption() {
        let set = separable_set();
        let m = train_annotator(
            &set,
            RecipeName::AnnBest,
            &small_spec(),
            &ChunkPolicy::new(300),
            &Hyperparameters::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        m.save(&p).unwrap();
        let back = AnnotatorModel::load(&p).unwrap();
        assert_eq!(back, m);
        let mut bytes = m.to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(AnnotatorModel::from_bytes(&bytes).is_err());
        assert!(AnnotatorModel::from_bytes(b"nope").is_err());
    }

    #[test]
    fn corpus_scoring_independent_of_workers() {
        let set = separable_set();
        let m = train_annotator(
            &set,
            RecipeName::AnnBest,
            &small_spec(),
            &ChunkPolicy::default(),
            &Hyperparameters::default(),
        )
        .unwrap();
        let docs: Vec<_> = (0..30)
            .map(|i| doc(&format!("d{:02}", (i * 7) % 30), &format!("def g{i}(): return {i}")))
            .collect();
        let a = score_corpus(&m, &docs, 1).unwrap();
        let b = score_corpus(&m, &docs, 8).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(score_corpus(&m, &[], 2).unwrap().is_empty());
        for r in &a {
            let d = docs.iter().find(|d| d.id == r.doc_id).unwrap();
            assert_eq!(r.score, m.score_document(d));
        }
    }

    #[test]
    fn regression_scores_are_clamped() {
        let mut m = AnnotatorModel::zeros(AnnotatorMode::Regression, small_spec(), ChunkPolicy::default());
        m.bias = 9.0;
        assert_eq!(m.score_text("x"), 5.0);
        m.bias = -3.0;
        assert_eq!(m.score_text("x"), 0.0);
    }
}
