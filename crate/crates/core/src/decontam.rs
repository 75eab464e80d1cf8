//! Benchmark decontamination by exact token n-gram overlap.
//!
//! Benchmark prompts and solutions are lowercased, split with the
//! approximate-regex tokenizer (so whitespace and layout are irrelevant) and
//! indexed as n-grams. Entries shorter than `n` tokens are indexed as one
//! whole-entry gram so short prompts cannot slip through.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::corpus::{pre_tokenize, CodeDocument};
use crate::hashing::{hash_bytes, hash_str};
use crate::io::{read_jsonl, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkEntry {
    pub entry_id: String,
    pub prompt: String,
    pub solution: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkCorpus {
    pub name: String,
    pub entries: Vec<BenchmarkEntry>,
}

/// One line of the benchmark input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub benchmark: String,
    #[serde(deserialize_with = "string_or_number")]
    pub entry_id: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub solution: String,
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "entry_id must be a string or number, got {other}"
        ))),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecontamError {
    #[error("n-gram size must be at least 3, got {0}")]
    NgramTooSmall(usize),
    #[error("benchmark {benchmark}: duplicate entry id {entry_id:?}")]
    DuplicateEntry { benchmark: String, entry_id: String },
    #[error(transparent)]
    Read(#[from] JsonlError),
}

/// Load a record-per-line benchmark file, grouping entries by benchmark name
/// (file order kept within a benchmark).
pub fn load_benchmarks(path: &Path) -> Result<Vec<BenchmarkCorpus>, DecontamError> {
    let records: Vec<BenchmarkRecord> = read_jsonl(path)?;
    let mut grouped: BTreeMap<String, Vec<BenchmarkEntry>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.benchmark).or_default().push(BenchmarkEntry {
            entry_id: r.entry_id,
            prompt: r.prompt,
            solution: r.solution,
        });
    }
    let corpora: Vec<BenchmarkCorpus> = grouped
        .into_iter()
        .map(|(name, entries)| BenchmarkCorpus { name, entries })
        .collect();
    for c in &corpora {
        check_unique_entries(c)?;
    }
    Ok(corpora)
}

fn check_unique_entries(c: &BenchmarkCorpus) -> Result<(), DecontamError> {
    let mut seen = HashSet::new();
    for e in &c.entries {
        if !seen.insert(e.entry_id.as_str()) {
            return Err(DecontamError::DuplicateEntry {
                benchmark: c.name.clone(),
                entry_id: e.entry_id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecontamConfig {
    pub ngram: usize,
    pub min_hits: usize,
    pub index_prompts: bool,
    pub index_solutions: bool,
}

impl Default for DecontamConfig {
    fn default() -> Self {
        Self {
            ngram: 10,
            min_hits: 1,
            index_prompts: true,
            index_solutions: true,
        }
    }
}

/// Lowercased token hashes of `text`.
pub fn normalized_token_hashes(text: &str) -> Vec<u64> {
    let lower = text.to_lowercase();
    pre_tokenize(&lower).map(|t| hash_str(t, 0)).collect()
}

fn gram_hash(tokens: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(tokens.len() * 8);
    for t in tokens {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    hash_bytes(&bytes, tokens.len() as u64)
}

/// Immutable n-gram index over benchmark entries.
#[derive(Debug, Clone, Default)]
pub struct NgramIndex {
    n: usize,
    grams: HashMap<u64, Vec<u32>>,
    entries: Vec<(String, String)>,
    short_lengths: BTreeSet<usize>,
}

impl NgramIndex {
    pub fn ngram_size(&self) -> usize {
        self.n
    }

    /// Number of distinct grams indexed.
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn entry(&self, idx: u32) -> (&str, &str) {
        let (b, e) = &self.entries[idx as usize];
        (b, e)
    }

    fn insert_text(&mut self, text: &str, entry: u32) {
        let toks = normalized_token_hashes(text);
        if toks.is_empty() {
            return;
        }
        if toks.len() < self.n {
            self.short_lengths.insert(toks.len());
            self.add(gram_hash(&toks), entry);
        } else {
            for w in toks.windows(self.n) {
                self.add(gram_hash(w), entry);
            }
        }
    }

    fn add(&mut self, gram: u64, entry: u32) {
        let refs = self.grams.entry(gram).or_default();
        if refs.last() != Some(&entry) && !refs.contains(&entry) {
            refs.push(entry);
        }
    }

    /// Distinct shared grams per entry for `text`, sorted by entry index.
    pub fn scan(&self, text: &str) -> Vec<(u32, usize)> {
        if self.grams.is_empty() {
            return Vec::new();
        }
        let toks = normalized_token_hashes(text);
        let mut hits: HashMap<u32, HashSet<u64>> = HashMap::new();
        let lengths = std::iter::once(self.n).chain(self.short_lengths.iter().copied());
        for len in lengths {
            if toks.len() < len {
                continue;
            }
            for w in toks.windows(len) {
                let g = gram_hash(w);
                if let Some(refs) = self.grams.get(&g) {
                    for &e in refs {
                        hits.entry(e).or_default().insert(g);
                    }
                }
            }
        }
        let mut out: Vec<(u32, usize)> = hits.into_iter().map(|(e, g)| (e, g.len())).collect();
        out.sort_unstable();
        out
    }

    /// Strongest-matching entry for `text` (most hits, then smallest
    /// `(benchmark, entry_id)`), if any.
    pub fn strongest_match(&self, text: &str) -> Option<(u32, usize)> {
        self.scan(text).into_iter().min_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| self.entries[a.0 as usize].cmp(&self.entries[b.0 as usize]))
        })
    }
}

pub fn build_ngram_index(
    benchmarks: &[BenchmarkCorpus],
    config: &DecontamConfig,
) -> Result<NgramIndex, DecontamError> {
    if config.ngram < 3 {
        return Err(DecontamError::NgramTooSmall(config.ngram));
    }
    let mut index = NgramIndex {
        n: config.ngram,
        ..Default::default()
    };
    for b in benchmarks {
        check_unique_entries(b)?;
        for e in &b.entries {
            let idx = index.entries.len() as u32;
            index.entries.push((b.name.clone(), e.entry_id.clone()));
            if config.index_prompts {
                index.insert_text(&e.prompt, idx);
            }
            if config.index_solutions {
                index.insert_text(&e.solution, idx);
            }
        }
    }
    Ok(index)
}

/// One line of the removal report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub doc_id: String,
    pub benchmark: String,
    pub entry_id: String,
    pub hit_count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DecontamOutcome {
    pub kept: Vec<CodeDocument>,
    pub removed: Vec<Removal>,
}

/// Remove every document sharing at least `min_hits` grams with a single
/// benchmark entry.
pub fn decontaminate(docs: Vec<CodeDocument>, index: &NgramIndex, min_hits: usize) -> DecontamOutcome {
    let min_hits = min_hits.max(1);
    let verdicts: Vec<Option<(u32, usize)>> = docs
        .par_iter()
        .map(|d| index.strongest_match(&d.content).filter(|(_, h)| *h >= min_hits))
        .collect();
    let mut out = DecontamOutcome::default();
    for (d, v) in docs.into_iter().zip(verdicts) {
        match v {
            None => out.kept.push(d),
            Some((e, hits)) => {
                let (b, id) = index.entry(e);
                out.removed.push(Removal {
                    doc_id: d.id,
                    benchmark: b.to_string(),
                    entry_id: id.to_string(),
                    hit_count: hits,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguageTag, Tokenizer};

    fn bench(name: &str, entries: &[(&str, &str, &str)]) -> BenchmarkCorpus {
        BenchmarkCorpus {
            name: name.into(),
            entries: entries
                .iter()
                .map(|(id, p, s)| BenchmarkEntry {
                    entry_id: id.to_string(),
                    prompt: p.to_string(),
                    solution: s.to_string(),
                })
                .collect(),
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

    #[test]
    fn empty_benchmarks_empty_index() {
        let idx = build_ngram_index(&[], &DecontamConfig::default()).unwrap();
        assert!(idx.is_empty());
        assert!(idx.scan("anything at all").is_empty());
    }

    #[test]
    fn twelve_tokens_give_three_windows() {
        let prompt = "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9 t10 t11";
        let idx = build_ngram_index(&[bench("b", &[("1", prompt, "")])], &DecontamConfig::default())
            .unwrap();
        assert_eq!(idx.len(), 3);
        let repeats = "a a a a a a a a a a a a";
        let idx = build_ngram_index(&[bench("b", &[("1", repeats, "")])], &DecontamConfig::default())
            .unwrap();
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn short_entry_indexed_whole() {
        let idx = build_ngram_index(
            &[bench("b", &[("1", "return a+b", "")])],
            &DecontamConfig::default(),
        )
        .unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.scan("x = 1\nRETURN   a + b\n").len(), 1);
        assert!(idx.scan("return a - b").is_empty());
    }

    #[test]
    fn small_n_rejected() {
        let cfg = DecontamConfig {
            ngram: 2,
            ..Default::default()
        };
        assert!(matches!(
            build_ngram_index(&[], &cfg),
            Err(DecontamError::NgramTooSmall(2))
        ));
    }

    #[test]
    fn duplicate_entry_rejected() {
        let b = bench("b", &[("1", "x", ""), ("1", "y", "")]);
        assert!(matches!(
            build_ngram_index(&[b], &DecontamConfig::default()),
            Err(DecontamError::DuplicateEntry { .. })
        ));
    }

    #[test]
    fn pasted_solution_is_removed_and_prompt_equal_removed() {
        let solution = "def has_close_elements(numbers, threshold):\n    for i, a in enumerate(numbers):\n        for j, b in enumerate(numbers):\n            if i != j and abs(a - b) < threshold:\n                return True\n    return False\n";
        let prompt = "def has_close_elements(numbers: List[float], threshold: float) -> bool:\n    \"\"\" Check if in given list of numbers, are any two numbers closer to each other than given threshold.\"\"\"\n";
        let idx = build_ngram_index(
            &[bench("HumanEval", &[("HumanEval/0", prompt, solution)])],
            &DecontamConfig::default(),
        )
        .unwrap();
        let planted = format!("import os\n\nprint('hello')\n{solution}\n# trailing\n");
        let docs = vec![
            doc("clean", "fn main() { println!(\"unrelated\"); }"),
            doc("planted", &planted),
            doc("prompt", prompt),
        ];
        let out = decontaminate(docs, &idx, 1);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].id, "clean");
        let ids: Vec<_> = out.removed.iter().map(|r| r.doc_id.as_str()).collect();
        assert_eq!(ids, ["planted", "prompt"]);
        assert!(out.removed.iter().all(|r| r.hit_count >= 1 && r.entry_id == "HumanEval/0"));
    }

    #[test]
    fn solutions_flag_controls_indexing() {
        let solution = "one two three four five six seven eight nine ten eleven";
        let cfg = DecontamConfig {
            index_solutions: false,
            ..Default::default()
        };
        let idx = build_ngram_index(&[bench("b", &[("1", "", solution)])], &cfg).unwrap();
        assert!(idx.is_empty());
    }

    #[test]
    fn min_hits_threshold() {
        let text = "a0 a1 a2 a3 a4 a5 a6 a7 a8 a9 a10 a11 a12 a13";
        let idx =
            build_ngram_index(&[bench("b", &[("1", text, "")])], &DecontamConfig::default()).unwrap();
        let partial = "zz a0 a1 a2 a3 a4 a5 a6 a7 a8 a9 zz";
        assert_eq!(idx.scan(partial), vec![(0, 1)]);
        assert_eq!(decontaminate(vec![doc("d", partial)], &idx, 2).removed.len(), 0);
        assert_eq!(decontaminate(vec![doc("d", text)], &idx, 5).removed[0].hit_count, 5);
    }
}
