//! Synthetic-data front end: seed selection, prompt rendering, response
//! collection and acceptance, and assembly of the synthetic corpus.

mod client;
pub mod lexical;

pub use client::{echo_transform, ClientError, GenerationClient, HttpClient, HttpClientConfig, MockClient, MockMode};

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{derive_document_id, write_shard, CodeDocument, LanguageTag, ScoreRecord, Tokenizer};
use crate::decontam::NgramIndex;
use crate::dedupe::{jaccard_exact, ShingleSet};
use crate::io::{write_json, write_jsonl};
use crate::selection::{select_top_percentile, Selection, SelectionError, SelectionPlan};

pub const DEFAULT_TEMPLATE: &str = "oss-instruct-doc-v1";
pub const DEFAULT_MAX_SEED_CHARS: usize = 4000;
pub const SNIPPET_OPEN: &str = "<<<SNIPPET\n";
pub const SNIPPET_CLOSE: &str = "\nSNIPPET>>>";

const BUILTIN_TEMPLATES: &[(&str, &str)] = &[(
    DEFAULT_TEMPLATE,
    include_str!("../../templates/oss-instruct-doc-v1.txt"),
)];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("template {0:?} has no {{snippet}} placeholder")]
    BadTemplate(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn builtin(id: &str) -> Result<Self, SynthError> {
        BUILTIN_TEMPLATES
            .iter()
            .find(|(k, _)| *k == id)
            .map(|(k, t)| Self {
                id: k.to_string(),
                text: t.to_string(),
            })
            .ok_or_else(|| SynthError::UnknownTemplate(id.to_string()))
    }

    pub fn from_file(id: &str, path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)?;
        if !text.contains("{snippet}") {
            return Err(SynthError::BadTemplate(id.to_string()));
        }
        Ok(Self {
            id: id.to_string(),
            text,
        })
    }

    pub fn render(&self, language: &LanguageTag, snippet: &str) -> String {
        let block = format!("{SNIPPET_OPEN}{snippet}{SNIPPET_CLOSE}");
        self.text
            .replace("{language}", language.as_str())
            .replace("{snippet}", &block)
    }
}

/// Seeds are the top-scoring documents under the plan's (reweighted)
/// quotas.
pub fn select_seeds(records: &[ScoreRecord], plan: &SelectionPlan) -> Result<Selection, SynthError> {
    Ok(select_top_percentile(records, &plan.quotas)?)
}

/// At most `max_chars` characters, cut after the last newline that fits.
/// A prefix without any newline is cut hard at `max_chars`.
pub fn truncate_at_line(content: &str, max_chars: usize) -> &str {
    match content.char_indices().nth(max_chars) {
        None => content,
        Some((byte_end, _)) => {
            let prefix = &content[..byte_end];
            match prefix.rfind('\n') {
                Some(nl) => &content[..=nl],
                None => prefix,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub request_id: String,
    pub seed_doc_id: String,
    pub language: LanguageTag,
    pub template_id: String,
    pub prompt_text: String,
    pub max_seed_chars: usize,
}

impl GenerationRequest {
    /// The seed text embedded between the snippet delimiters.
    pub fn seed_snippet(&self) -> Option<&str> {
        let start = self.prompt_text.find(SNIPPET_OPEN)? + SNIPPET_OPEN.len();
        let end = start + self.prompt_text[start..].find(SNIPPET_CLOSE)?;
        Some(&self.prompt_text[start..end])
    }
}

/// One request per seed, sorted by request id.
pub fn emit_generation_requests(
    seeds: &[CodeDocument],
    template: &PromptTemplate,
    max_seed_chars: usize,
) -> Vec<GenerationRequest> {
    let mut out: Vec<GenerationRequest> = seeds
        .iter()
        .map(|d| {
            let snippet = truncate_at_line(&d.content, max_seed_chars);
            GenerationRequest {
                request_id: format!("{}:{}", template.id, d.id),
                seed_doc_id: d.id.clone(),
                language: d.language.clone(),
                template_id: template.id.clone(),
                prompt_text: template.render(&d.language, snippet),
                max_seed_chars,
            }
        })
        .collect();
    out.sort_by(|a, b| a.request_id.cmp(&b.request_id));
    out
}

/// Body of the first fenced block; the whole text when there is no fence.
pub fn extract_code(raw: &str) -> Result<String, String> {
    let mut lines = raw.split_inclusive('\n');
    let mut body = String::new();
    let mut opened = false;
    for line in lines.by_ref() {
        if line.trim_start().starts_with("```") {
            opened = true;
            break;
        }
    }
    if !opened {
        return Ok(raw.to_string());
    }
    for line in lines {
        if line.trim_start().starts_with("```") {
            return Ok(body);
        }
        body.push_str(line);
    }
    Err("unterminated code fence".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcceptanceConfig {
    /// Responses at or above this Jaccard similarity to their seed are
    /// rejected.
    pub near_duplicate_bound: f64,
    pub shingle_size: usize,
    pub min_hits: usize,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            near_duplicate_bound: 0.5,
            shingle_size: 5,
            min_hits: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_in_flight: usize,
    pub acceptance: AcceptanceConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff_ms: 500,
            max_in_flight: 4,
            acceptance: AcceptanceConfig::default(),
        }
    }
}

pub const REJECT_EMPTY: &str = "empty";
pub const REJECT_NEAR_DUPLICATE: &str = "near-duplicate of seed";
pub const REJECT_TRANSPORT: &str = "transport";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub request_id: String,
    pub seed_doc_id: String,
    pub language: LanguageTag,
    pub template_id: String,
    pub raw_text: String,
    pub extracted_code: Option<String>,
    pub accepted: bool,
    pub reject_reason: Option<String>,
    pub attempts: u32,
}

/// Per-request timing, kept apart from responses so that response files
/// stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLog {
    pub request_id: String,
    pub elapsed_ms: u64,
    pub attempts: u32,
    pub accepted: bool,
    pub reject_reason: Option<String>,
}

/// Reason to reject `code` generated for `request`, if any.
pub fn acceptance_verdict(
    request: &GenerationRequest,
    code: &str,
    cfg: &AcceptanceConfig,
    index: Option<&NgramIndex>,
) -> Option<String> {
    if code.trim().is_empty() {
        return Some(REJECT_EMPTY.into());
    }
    if let Err(e) = lexical::check(code, &request.language) {
        return Some(format!("lexical: {e}"));
    }
    let seed = request.seed_snippet().unwrap_or_default();
    let a = ShingleSet::from_text("seed", seed, cfg.shingle_size);
    let b = ShingleSet::from_text("response", code, cfg.shingle_size);
    if jaccard_exact(&a, &b).at_least(cfg.near_duplicate_bound) {
        return Some(REJECT_NEAR_DUPLICATE.into());
    }
    if let Some(idx) = index {
        if let Some((e, hits)) = idx.strongest_match(code) {
            if hits >= cfg.min_hits.max(1) {
                let (bench, entry) = idx.entry(e);
                return Some(format!("contaminated: {bench}/{entry}"));
            }
        }
    }
    None
}

fn collect_one(
    request: &GenerationRequest,
    client: &dyn GenerationClient,
    cfg: &CollectConfig,
    index: Option<&NgramIndex>,
) -> (GenerationResponse, ResponseLog) {
    let started = Instant::now();
    let mut attempts = 0;
    let outcome = loop {
        attempts += 1;
        match client.generate(request) {
            Err(ClientError::Transport(e)) if attempts < cfg.max_attempts.max(1) => {
                log::debug!("{}: attempt {attempts} failed: {e}", request.request_id);
                let backoff = cfg.initial_backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            other => break other,
        }
    };
    let (raw_text, extracted_code, reject_reason) = match outcome {
        Err(ClientError::Transport(_)) => (String::new(), None, Some(REJECT_TRANSPORT.to_string())),
        Err(ClientError::Malformed(m)) => (String::new(), None, Some(format!("malformed: {m}"))),
        Ok(raw) => match extract_code(&raw) {
            Err(m) => (raw, None, Some(format!("malformed: {m}"))),
            Ok(code) => {
                let verdict = acceptance_verdict(request, &code, &cfg.acceptance, index);
                (raw, Some(code), verdict)
            }
        },
    };
    let resp = GenerationResponse {
        request_id: request.request_id.clone(),
        seed_doc_id: request.seed_doc_id.clone(),
        language: request.language.clone(),
        template_id: request.template_id.clone(),
        raw_text,
        extracted_code: extracted_code.filter(|c| !c.trim().is_empty()),
        accepted: reject_reason.is_none(),
        reject_reason,
        attempts,
    };
    let log = ResponseLog {
        request_id: resp.request_id.clone(),
        elapsed_ms: started.elapsed().as_millis() as u64,
        attempts,
        accepted: resp.accepted,
        reject_reason: resp.reject_reason.clone(),
    };
    (resp, log)
}

/// One response per request, sorted by request id, plus timing logs.
pub fn collect_responses(
    requests: &[GenerationRequest],
    client: &dyn GenerationClient,
    cfg: &CollectConfig,
    index: Option<&NgramIndex>,
) -> (Vec<GenerationResponse>, Vec<ResponseLog>) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let mut pairs: Vec<(GenerationResponse, ResponseLog)> = pool.install(|| {
        requests
            .par_iter()
            .map(|r| collect_one(r, client, cfg, index))
            .collect()
    });
    pairs.sort_by(|a, b| a.0.request_id.cmp(&b.0.request_id));
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProvenance {
    pub doc_id: String,
    pub request_id: String,
    pub seed_doc_id: String,
    pub language: LanguageTag,
}

/// Blend of synthetic and passthrough data in the assembled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BlendParameters {
    /// Requested synthetic share of tokens, if the caller set one.
    pub target_synthetic_share: Option<f64>,
    pub synthetic_tokens: u64,
    pub passthrough_tokens: u64,
    pub synthetic_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase3Manifest {
    pub template_id: String,
    pub synthetic_count: usize,
    pub passthrough_count: usize,
    pub blend: BlendParameters,
    pub synthetic: Vec<SyntheticProvenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase3Corpus {
    /// Sorted by id.
    pub documents: Vec<CodeDocument>,
    pub manifest: Phase3Manifest,
}

/// Accepted responses become documents under repo `synthetic/<template>`;
/// they are merged with the passthrough documents.
pub fn assemble_phase3_corpus(
    responses: &[GenerationResponse],
    passthrough: Vec<CodeDocument>,
    template_id: &str,
    target_synthetic_share: Option<f64>,
    tokenizer: &Tokenizer,
) -> Phase3Corpus {
    let repo = format!("synthetic/{template_id}");
    let mut seen: HashSet<String> = passthrough.iter().map(|d| d.id.clone()).collect();
    let mut synthetic = Vec::new();
    let mut provenance = Vec::new();
    for r in responses.iter().filter(|r| r.accepted) {
        let Some(code) = &r.extracted_code else { continue };
        let path = format!("{}.{}", r.seed_doc_id, r.language.file_extension());
        let id = derive_document_id(&repo, &path, code);
        if !seen.insert(id.clone()) {
            log::warn!("skipping duplicate synthetic document {id} from {}", r.request_id);
            continue;
        }
        provenance.push(SyntheticProvenance {
            doc_id: id.clone(),
            request_id: r.request_id.clone(),
            seed_doc_id: r.seed_doc_id.clone(),
            language: r.language.clone(),
        });
        synthetic.push(CodeDocument::new(Some(id), &repo, &path, r.language.clone(), code.as_str(), tokenizer));
    }
    let synthetic_tokens: u64 = synthetic.iter().map(|d| d.token_count as u64).sum();
    let passthrough_tokens: u64 = passthrough.iter().map(|d| d.token_count as u64).sum();
    let total = synthetic_tokens + passthrough_tokens;
    let manifest = Phase3Manifest {
        template_id: template_id.to_string(),
        synthetic_count: synthetic.len(),
        passthrough_count: passthrough.len(),
        blend: BlendParameters {
            target_synthetic_share,
            synthetic_tokens,
            passthrough_tokens,
            synthetic_share: if total == 0 { 0.0 } else { synthetic_tokens as f64 / total as f64 },
        },
        synthetic: provenance,
    };
    let mut documents = passthrough;
    documents.extend(synthetic);
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    Phase3Corpus { documents, manifest }
}

impl Phase3Corpus {
    /// `corpus.jsonl` plus `manifest.json` in `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        write_shard(&dir.join("corpus.jsonl"), &self.documents)?;
        write_json(&dir.join("manifest.json"), &self.manifest)
    }
}

pub fn write_responses(path: &Path, responses: &[GenerationResponse]) -> std::io::Result<()> {
    write_jsonl(path, responses)
}

/// Share of seed tokens per language.
pub fn token_share(records: &[ScoreRecord], ids: &[String]) -> BTreeMap<LanguageTag, f64> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut mass: BTreeMap<LanguageTag, u64> = BTreeMap::new();
    for r in records.iter().filter(|r| wanted.contains(r.doc_id.as_str())) {
        *mass.entry(r.language.clone()).or_default() += r.token_count as u64;
    }
    let total: u64 = mass.values().sum();
    mass.into_iter()
        .map(|(l, m)| (l, if total == 0 { 0.0 } else { m as f64 / total as f64 }))
        .collect()
}
