//! Scoring precomputed embeddings with a linear head.
//!
//! Vectors file: record-per-line, optionally starting with a header record
//! `{"dim": N}`, then `{"id", "language", "token_count", "vector"}` records.
//! Without a header the head's dimension is taken as the declared one.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sigmoid, AnnotatorError};
use crate::corpus::{LanguageTag, ScoreRecord};
use crate::io::open_reader;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHead {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub bias: f64,
}

impl EmbeddingHead {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn load(path: &Path) -> Result<Self, AnnotatorError> {
        let text = std::fs::read_to_string(path).map_err(|source| AnnotatorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| AnnotatorError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn score(&self, v: &[f64]) -> f64 {
        sigmoid(self.weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    #[serde(default = "LanguageTag::python")]
    pub language: LanguageTag,
    #[serde(default)]
    pub token_count: usize,
    pub vector: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header { dim: usize },
    Record(EmbeddingRecord),
}

/// Score in-memory records.
pub fn score_embeddings(
    records: &[EmbeddingRecord],
    head: &EmbeddingHead,
) -> Result<Vec<ScoreRecord>, AnnotatorError> {
    let mut seen = HashSet::new();
    records
        .iter()
        .map(|r| {
            if r.vector.len() != head.dim() {
                return Err(AnnotatorError::DimensionMismatch {
                    id: r.id.clone(),
                    expected: head.dim(),
                    got: r.vector.len(),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(AnnotatorError::DuplicateId(r.id.clone()));
            }
            Ok(ScoreRecord {
                doc_id: r.id.clone(),
                language: r.language.clone(),
                score: head.score(&r.vector),
                token_count: r.token_count,
            })
        })
        .collect()
}

pub fn import_embedding_scores(
    vectors_file: &Path,
    head: &EmbeddingHead,
) -> Result<Vec<ScoreRecord>, AnnotatorError> {
    let io_err = |source| AnnotatorError::Io {
        path: vectors_file.to_path_buf(),
        source,
    };
    let reader = open_reader(vectors_file).map_err(io_err)?;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| AnnotatorError::Format {
            path: vectors_file.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        match parsed {
            Line::Header { dim } if records.is_empty() => {
                if dim != head.dim() {
                    return Err(AnnotatorError::DimensionMismatch {
                        id: "<header>".into(),
                        expected: head.dim(),
                        got: dim,
                    });
                }
            }
            Line::Header { .. } => {
                return Err(AnnotatorError::Format {
                    path: vectors_file.to_path_buf(),
                    message: format!("line {}: header after records", i + 1),
                })
            }
            Line::Record(r) => records.push(r),
        }
    }
    score_embeddings(&records, head)
}
