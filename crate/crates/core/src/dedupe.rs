//! Exact and near deduplication of documents.
//!
//! Near dedup shingles normalized content into character n-grams, builds
//! MinHash signatures, and uses LSH banding to propose candidate pairs.
//! Every candidate is confirmed with exact Jaccard over the shingle sets, so
//! the only way the result can differ from an all-pairs clustering is a
//! pair the banding never proposed.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CodeDocument;
use crate::hashing::{derive_seed, hash_bytes, hash_str, mix64, sha256_hex};
use crate::io::write_jsonl;

/// Lowercase and collapse every whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_space {
                out.push(' ');
                in_space = true;
            }
        } else {
            out.extend(c.to_lowercase());
            in_space = false;
        }
    }
    out
}

/// Sorted, duplicate-free set of shingle hashes for one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub doc_id: String,
    shingles: Vec<u64>,
}

impl ShingleSet {
    /// Character `n`-gram shingles of the normalized content. Content
    /// shorter than `n` characters (but non-empty) is one whole shingle.
    pub fn from_text(doc_id: impl Into<String>, content: &str, n: usize) -> Self {
        assert!(n > 0, "shingle size must be positive");
        let norm = normalize(content);
        let bounds: Vec<usize> = norm
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(norm.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut shingles: Vec<u64> = if n_chars == 0 {
            Vec::new()
        } else if n_chars < n {
            vec![hash_str(&norm, 0)]
        } else {
            (0..=n_chars - n)
                .map(|i| hash_str(&norm[bounds[i]..bounds[i + n]], 0))
                .collect()
        };
        shingles.sort_unstable();
        shingles.dedup();
        Self {
            doc_id: doc_id.into(),
            shingles,
        }
    }

    pub fn from_hashes(doc_id: impl Into<String>, hashes: impl IntoIterator<Item = u64>) -> Self {
        let mut shingles: Vec<u64> = hashes.into_iter().collect();
        shingles.sort_unstable();
        shingles.dedup();
        Self {
            doc_id: doc_id.into(),
            shingles,
        }
    }

    pub fn hashes(&self) -> &[u64] {
        &self.shingles
    }

    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }
}

/// Exact Jaccard as a ratio of set sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Jaccard {
    pub intersection: usize,
    pub union: usize,
}

impl Jaccard {
    pub fn value(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }

    pub fn at_least(&self, threshold: f64) -> bool {
        self.value() >= threshold
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 1 when both sets are empty.
pub fn jaccard_exact(a: &ShingleSet, b: &ShingleSet) -> Jaccard {
    let (x, y) = (&a.shingles, &b.shingles);
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Jaccard {
        intersection: inter,
        union: x.len() + y.len() - inter,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub doc_id: String,
    pub values: Vec<u64>,
    pub permutation_seed: u64,
}

impl MinHashSignature {
    /// Fraction of positions on which two signatures agree; an unbiased
    /// estimate of Jaccard similarity.
    pub fn agreement(&self, other: &MinHashSignature) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        assert_eq!(self.permutation_seed, other.permutation_seed);
        let same = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.values.len() as f64
    }
}

/// Family of `len` hash functions `h_i(x) = mix64(x ^ k_i)`, with keys
/// derived from `(seed, i)`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    keys: Vec<u64>,
}

impl MinHasher {
    pub fn new(len: usize, seed: u64) -> Self {
        let keys = (0..len as u64)
            .map(|i| derive_seed(seed, "minhash", i))
            .collect();
        Self { seed, keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn signature(&self, set: &ShingleSet) -> MinHashSignature {
        let mut values = vec![u64::MAX; self.keys.len()];
        for &s in set.hashes() {
            for (v, &k) in values.iter_mut().zip(&self.keys) {
                let h = mix64(s ^ k);
                if h < *v {
                    *v = h;
                }
            }
        }
        MinHashSignature {
            doc_id: set.doc_id.clone(),
            values,
            permutation_seed: self.seed,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DedupError {
    #[error("bands ({bands}) must be positive and divide signature_len ({signature_len})")]
    InvalidBanding { signature_len: usize, bands: usize },
    #[error("threshold {0} must lie in (0, 1]")]
    InvalidThreshold(f64),
    #[error("shingle size must be positive")]
    InvalidShingleSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NearDedupConfig {
    pub threshold: f64,
    pub signature_len: usize,
    pub bands: usize,
    pub shingle_size: usize,
    pub seed: u64,
}

impl Default for NearDedupConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            signature_len: 128,
            bands: 16,
            shingle_size: 5,
            seed: 0,
        }
    }
}

impl NearDedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.bands == 0 || self.signature_len == 0 || !self.signature_len.is_multiple_of(self.bands) {
            return Err(DedupError::InvalidBanding {
                signature_len: self.signature_len,
                bands: self.bands,
            });
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(DedupError::InvalidThreshold(self.threshold));
        }
        if self.shingle_size == 0 {
            return Err(DedupError::InvalidShingleSize);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupMethod {
    Exact,
    Near,
}

/// One line of the dedup report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub dropped_id: String,
    pub kept_id: String,
    pub method: DedupMethod,
    /// Exact Jaccard between the dropped document and its keeper. Can sit
    /// below the threshold when the two are linked only transitively.
    pub confirmed_jaccard: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub kept: Vec<CodeDocument>,
    pub dropped: Vec<DropRecord>,
}

/// Keep one document per distinct content (the smallest id).
pub fn exact_dedup(docs: Vec<CodeDocument>) -> DedupOutcome {
    let hashes: Vec<String> = docs.par_iter().map(|d| d.content_hash()).collect();
    let mut keeper: HashMap<&str, &str> = HashMap::new();
    for (d, h) in docs.iter().zip(&hashes) {
        keeper
            .entry(h.as_str())
            .and_modify(|k| {
                if d.id.as_str() < *k {
                    *k = d.id.as_str();
                }
            })
            .or_insert(d.id.as_str());
    }
    let keep_ids: Vec<Option<String>> = docs
        .iter()
        .zip(&hashes)
        .map(|(d, h)| {
            let k = keeper[h.as_str()];
            (k != d.id).then(|| k.to_string())
        })
        .collect();
    drop(keeper);

    let mut out = DedupOutcome::default();
    for (d, k) in docs.into_iter().zip(keep_ids) {
        match k {
            None => out.kept.push(d),
            Some(kept_id) => out.dropped.push(DropRecord {
                dropped_id: d.id,
                kept_id,
                method: DedupMethod::Exact,
                confirmed_jaccard: 1.0,
            }),
        }
    }
    out.dropped.sort_by(|a, b| a.dropped_id.cmp(&b.dropped_id));
    out
}

/// Candidate pairs `(i, j)` with `i < j` that share at least one LSH band.
pub fn lsh_candidates(signatures: &[MinHashSignature], bands: usize) -> Vec<(usize, usize)> {
    if signatures.is_empty() {
        return Vec::new();
    }
    let rows = signatures[0].values.len() / bands;
    let mut pairs: Vec<(usize, usize)> = (0..bands)
        .into_par_iter()
        .flat_map_iter(|band| {
            let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
            for (idx, sig) in signatures.iter().enumerate() {
                let slice = &sig.values[band * rows..(band + 1) * rows];
                let mut bytes = Vec::with_capacity(rows * 8);
                for v in slice {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                buckets
                    .entry(hash_bytes(&bytes, band as u64))
                    .or_default()
                    .push(idx);
            }
            let mut local = Vec::new();
            for members in buckets.into_values() {
                for (a, &i) in members.iter().enumerate() {
                    for &j in &members[a + 1..] {
                        local.push((i.min(j), i.max(j)));
                    }
                }
            }
            local
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Given shingle sets and confirmed duplicate edges, return for each
/// index the index of its cluster keeper (smallest doc id in the connected
/// component).
pub fn cluster_keepers(sets: &[ShingleSet], edges: &[(usize, usize)]) -> Vec<usize> {
    let mut ds = DisjointSet::new(sets.len());
    for &(a, b) in edges {
        ds.union(a, b);
    }
    let mut best: HashMap<usize, usize> = HashMap::new();
    for i in 0..sets.len() {
        let root = ds.find(i);
        best.entry(root)
            .and_modify(|k| {
                if sets[i].doc_id < sets[*k].doc_id {
                    *k = i;
                }
            })
            .or_insert(i);
    }
    (0..sets.len()).map(|i| best[&ds.find(i)]).collect()
}

/// MinHash/LSH near deduplication with exact-Jaccard confirmation.
pub fn near_dedup(
    docs: Vec<CodeDocument>,
    config: &NearDedupConfig,
) -> Result<DedupOutcome, DedupError> {
    config.validate()?;
    let sets: Vec<ShingleSet> = docs
        .par_iter()
        .map(|d| ShingleSet::from_text(d.id.clone(), &d.content, config.shingle_size))
        .collect();
    let hasher = MinHasher::new(config.signature_len, config.seed);
    let sigs: Vec<MinHashSignature> = sets.par_iter().map(|s| hasher.signature(s)).collect();
    let candidates = lsh_candidates(&sigs, config.bands);
    let edges: Vec<(usize, usize)> = candidates
        .into_par_iter()
        .filter(|&(i, j)| jaccard_exact(&sets[i], &sets[j]).at_least(config.threshold))
        .collect();
    let keepers = cluster_keepers(&sets, &edges);

    let mut out = DedupOutcome::default();
    let mut dropped = Vec::new();
    for (i, k) in keepers.iter().enumerate() {
        if *k != i {
            dropped.push(DropRecord {
                dropped_id: sets[i].doc_id.clone(),
                kept_id: sets[*k].doc_id.clone(),
                method: DedupMethod::Near,
                confirmed_jaccard: jaccard_exact(&sets[i], &sets[*k]).value(),
            });
        }
    }
    out.kept = docs
        .into_iter()
        .zip(&keepers)
        .enumerate()
        .filter(|(i, (_, k))| *i == **k)
        .map(|(_, (d, _))| d)
        .collect();
    dropped.sort_by(|a, b| a.dropped_id.cmp(&b.dropped_id));
    out.dropped = dropped;
    Ok(out)
}

/// Write the dedup report (one [`DropRecord`] per line).
pub fn write_report(path: &Path, records: &[DropRecord]) -> io::Result<()> {
    write_jsonl(path, records)
}

/// Content digest used by exact dedup, exposed for tooling.
pub fn content_digest(content: &str) -> String {
    sha256_hex(content.as_bytes())
}
