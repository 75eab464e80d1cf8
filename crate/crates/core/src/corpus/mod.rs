//! Document model, shard ingestion, language partitioning and token counting.

mod language;
mod manifest;
mod tokenizer;

pub use language::{LanguageSet, LanguageTag, DEFAULT_LANGUAGES};
pub use manifest::{CorpusManifest, ManifestError};
pub use tokenizer::{
    count_tokens, pre_tokenize, PreTokens, Tokenizer, TokenizerError, TokenizerKind,
    TokenizerSpec, RESERVED_IDS,
};

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hashing::{sha256_hex, ContentHasher};
use crate::io::{open_reader, write_jsonl};

/// One source file: the unit flowing through every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDocument {
    pub id: String,
    pub repo_name: String,
    pub path: String,
    pub language: LanguageTag,
    pub content: String,
    pub token_count: usize,
}

impl CodeDocument {
    /// Build a document, deriving the id when absent and counting tokens.
    pub fn new(
        id: Option<String>,
        repo_name: impl Into<String>,
        path: impl Into<String>,
        language: LanguageTag,
        content: impl Into<String>,
        tokenizer: &Tokenizer,
    ) -> Self {
        let repo_name = repo_name.into();
        let path = path.into();
        let content = content.into();
        let id = id.unwrap_or_else(|| derive_document_id(&repo_name, &path, &content));
        let token_count = tokenizer.count(&content);
        Self {
            id,
            repo_name,
            path,
            language,
            content,
            token_count,
        }
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.content.as_bytes())
    }

    pub fn to_record(&self) -> ShardRecord {
        ShardRecord {
            id: Some(self.id.clone()),
            repo_name: self.repo_name.clone(),
            path: self.path.clone(),
            language: self.language.as_str().to_string(),
            content: self.content.clone(),
        }
    }
}

/// Stable id for records that do not carry one: the first 128 bits of
/// `sha256(repo_name, path, sha256(content))`, hex encoded.
pub fn derive_document_id(repo_name: &str, path: &str, content: &str) -> String {
    let mut h = ContentHasher::new();
    h.field(repo_name.as_bytes())
        .field(path.as_bytes())
        .field(sha256_hex(content.as_bytes()).as_bytes());
    let mut hex = h.finish_hex();
    hex.truncate(32);
    hex
}

/// On-disk shard record, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub repo_name: String,
    pub path: String,
    pub language: String,
    pub content: String,
}

/// Per-document quality score: the ranking substrate for selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    pub language: LanguageTag,
    pub score: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordErrorKind {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("content is not valid UTF-8")]
    NonUtf8,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("rejected by filter: {0}")]
    Filtered(String),
}

/// A rejected record, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[error("{shard}:{line}: {kind}")]
pub struct RecordError {
    pub shard: String,
    pub line: usize,
    #[serde(serialize_with = "serialize_display")]
    pub kind: RecordErrorKind,
}

fn serialize_display<S: serde::Serializer, T: std::fmt::Display>(
    v: &T,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read shard {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// What to do when a record fails validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPolicy {
    FailFast,
    #[default]
    SkipAndCount,
}

/// Optional heuristic filters. All off by default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BasicFilter {
    #[serde(default)]
    pub max_line_length: Option<usize>,
    #[serde(default)]
    pub min_alpha_ratio: Option<f64>,
}

impl BasicFilter {
    pub fn is_noop(&self) -> bool {
        self.max_line_length.is_none() && self.min_alpha_ratio.is_none()
    }

    /// `Err(reason)` when the content fails a configured filter.
    pub fn check(&self, content: &str) -> Result<(), String> {
        if let Some(max) = self.max_line_length {
            if let Some(len) = content.lines().map(|l| l.chars().count()).max() {
                if len > max {
                    return Err(format!("line of {len} chars exceeds {max}"));
                }
            }
        }
        if let Some(min) = self.min_alpha_ratio {
            let total = content.chars().count();
            if total > 0 {
                let alpha = content.chars().filter(|c| c.is_alphabetic()).count();
                let ratio = alpha as f64 / total as f64;
                if ratio < min {
                    return Err(format!("alpha ratio {ratio:.3} below {min}"));
                }
            }
        }
        Ok(())
    }
}

/// Streaming reader over one shard, yielding validated documents in file
/// order.
pub struct ShardReader<'a> {
    shard: String,
    lines: Box<dyn BufRead + Send>,
    line_no: usize,
    languages: &'a LanguageSet,
    tokenizer: &'a Tokenizer,
    buf: Vec<u8>,
}

impl<'a> ShardReader<'a> {
    pub fn open(
        path: &Path,
        languages: &'a LanguageSet,
        tokenizer: &'a Tokenizer,
    ) -> Result<Self, IngestError> {
        let lines = open_reader(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            shard: path.display().to_string(),
            lines,
            line_no: 0,
            languages,
            tokenizer,
            buf: Vec::new(),
        })
    }

    fn parse(&self, raw: &[u8]) -> Result<CodeDocument, RecordErrorKind> {
        let text = std::str::from_utf8(raw).map_err(|_| RecordErrorKind::NonUtf8)?;
        let rec: ShardRecord =
            serde_json::from_str(text).map_err(|e| RecordErrorKind::Malformed(e.to_string()))?;
        let language = self
            .languages
            .resolve(&rec.language)
            .ok_or_else(|| RecordErrorKind::UnknownLanguage(rec.language.clone()))?;
        if matches!(&rec.id, Some(id) if id.is_empty()) {
            return Err(RecordErrorKind::Malformed("empty id".into()));
        }
        Ok(CodeDocument::new(
            rec.id,
            rec.repo_name,
            rec.path,
            language,
            rec.content,
            self.tokenizer,
        ))
    }
}

impl Iterator for ShardReader<'_> {
    type Item = Result<CodeDocument, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.lines.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    return Some(Err(IngestError::Io {
                        path: PathBuf::from(&self.shard),
                        source,
                    }))
                }
            }
            self.line_no += 1;
            let raw = trim_line(&self.buf);
            if raw.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            return Some(self.parse(raw).map_err(|kind| {
                IngestError::Record(RecordError {
                    shard: self.shard.clone(),
                    line: self.line_no,
                    kind,
                })
            }));
        }
    }
}

fn trim_line(buf: &[u8]) -> &[u8] {
    let mut end = buf.len();
    while end > 0 && (buf[end - 1] == b'\n' || buf[end - 1] == b'\r') {
        end -= 1;
    }
    &buf[..end]
}

/// Documents accepted from one or more shards plus the rejected records.
#[derive(Debug, Default, Clone)]
pub struct IngestOutcome {
    pub documents: Vec<CodeDocument>,
    pub errors: Vec<RecordError>,
}

/// Read one shard under `policy`. With [`ErrorPolicy::FailFast`] the first
/// bad record aborts; otherwise bad records are collected in `errors`.
pub fn ingest_shard(
    path: &Path,
    languages: &LanguageSet,
    tokenizer: &Tokenizer,
    policy: ErrorPolicy,
) -> Result<IngestOutcome, IngestError> {
    let mut out = IngestOutcome::default();
    for item in ShardReader::open(path, languages, tokenizer)? {
        match item {
            Ok(doc) => out.documents.push(doc),
            Err(IngestError::Record(e)) if policy == ErrorPolicy::SkipAndCount => {
                out.errors.push(e)
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Ingest every shard of a manifest (in parallel), then enforce id
/// uniqueness and optional heuristic filters in manifest order.
pub fn ingest_manifest(
    manifest: &CorpusManifest,
    filter: &BasicFilter,
    policy: ErrorPolicy,
) -> Result<IngestOutcome, IngestError> {
    use rayon::prelude::*;

    let tokenizer = Tokenizer::from_spec(&manifest.tokenizer)?;
    let languages = manifest.language_set();
    let per_shard: Vec<Result<IngestOutcome, IngestError>> = manifest
        .shards
        .par_iter()
        .map(|p| ingest_shard(p, &languages, &tokenizer, policy))
        .collect();

    let mut out = IngestOutcome::default();
    let mut seen = HashSet::new();
    for (shard, result) in manifest.shards.iter().zip(per_shard) {
        let part = result?;
        out.errors.extend(part.errors);
        // Line numbers are not retained past the reader, so filter and
        // duplicate errors report the document's ordinal within the shard.
        for (ordinal, doc) in part.documents.into_iter().enumerate() {
            let kind = if !seen.insert(doc.id.clone()) {
                Some(RecordErrorKind::DuplicateId(doc.id.clone()))
            } else {
                filter.check(&doc.content).err().map(RecordErrorKind::Filtered)
            };
            match kind {
                None => out.documents.push(doc),
                Some(kind) => {
                    let err = RecordError {
                        shard: shard.display().to_string(),
                        line: ordinal + 1,
                        kind,
                    };
                    if policy == ErrorPolicy::FailFast {
                        return Err(err.into());
                    }
                    out.errors.push(err);
                }
            }
        }
    }
    Ok(out)
}

/// Write documents as a shard (gzip when the path ends in `.gz`).
pub fn write_shard(path: &Path, docs: &[CodeDocument]) -> io::Result<()> {
    write_jsonl(path, docs.iter().map(CodeDocument::to_record))
}

/// Group documents by language. Bucket order is the input order.
pub fn partition_by_language<I>(docs: I) -> BTreeMap<LanguageTag, Vec<CodeDocument>>
where
    I: IntoIterator<Item = CodeDocument>,
{
    let mut buckets: BTreeMap<LanguageTag, Vec<CodeDocument>> = BTreeMap::new();
    for doc in docs {
        buckets.entry(doc.language.clone()).or_default().push(doc);
    }
    buckets
}

/// Token mass per language.
pub fn token_mass_by_language<'a, I>(docs: I) -> BTreeMap<LanguageTag, u64>
where
    I: IntoIterator<Item = &'a CodeDocument>,
{
    let mut mass: BTreeMap<LanguageTag, u64> = BTreeMap::new();
    for d in docs {
        *mass.entry(d.language.clone()).or_default() += d.token_count as u64;
    }
    mass
}
