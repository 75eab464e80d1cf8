//! Repository grouping and fixed-length sequence packing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CodeDocument, LanguageTag, Tokenizer};
use crate::hashing::{derive_seed, hash_str, seeded_shuffle_by};
use crate::io::{write_jsonl, AtomicFile};

pub const DEFAULT_SEQ_LEN: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingStrategy {
    ByRepo,
    ByLanguageAndRepo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageScope {
    Single(LanguageTag),
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingDocument {
    pub id: String,
    pub member_files: Vec<String>,
    pub language_scope: LanguageScope,
    /// Member contents, in `member_files` order.
    pub segments: Vec<String>,
}

impl TrainingDocument {
    pub fn text(&self, separator: &str) -> String {
        self.segments.join(separator)
    }

    /// Member tokens with `file_sep` between consecutive members.
    pub fn encode(&self, tokenizer: &Tokenizer, file_sep: u32) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push(file_sep);
            }
            tokenizer.encode_into(s, &mut out);
        }
        out
    }
}

fn group_key(doc: &CodeDocument, strategy: GroupingStrategy) -> String {
    match strategy {
        GroupingStrategy::ByRepo => doc.repo_name.clone(),
        GroupingStrategy::ByLanguageAndRepo => format!("{}::{}", doc.language, doc.repo_name),
    }
}

/// One training document per repo (or per language and repo). Member order
/// is a seeded shuffle keyed by the training document id; output is sorted
/// by id.
pub fn group_documents(
    files: Vec<CodeDocument>,
    strategy: GroupingStrategy,
    seed: u64,
) -> Vec<TrainingDocument> {
    let mut groups: BTreeMap<String, Vec<CodeDocument>> = BTreeMap::new();
    for f in files {
        groups.entry(group_key(&f, strategy)).or_default().push(f);
    }
    groups
        .into_par_iter()
        .map(|(id, mut members)| {
            seeded_shuffle_by(&mut members, hash_str(&id, seed), |d| d.id.as_str());
            let first = members[0].language.clone();
            let language_scope = if members.iter().all(|m| m.language == first) {
                LanguageScope::Single(first)
            } else {
                LanguageScope::Mixed
            };
            let (member_files, segments) = members.into_iter().map(|m| (m.id, m.content)).unzip();
            TrainingDocument {
                id,
                member_files,
                language_scope,
                segments,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Markers {
    pub pad: u32,
    pub boundary: u32,
    pub file_sep: u32,
}

impl Default for Markers {
    fn default() -> Self {
        Self {
            pad: 0,
            boundary: 1,
            file_sep: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PackConfig {
    pub seq_len: usize,
    pub markers: Markers,
    pub num_shards: usize,
}

impl Default for PackConfig {
    fn default() -> Self {
        Self {
            seq_len: DEFAULT_SEQ_LEN,
            markers: Markers::default(),
            num_shards: 1,
        }
    }
}

/// Part of one training document inside a sequence. `start..end` indexes
/// the sequence; `doc_offset` is the position of `start` within the
/// document's token stream (boundary marker included as its last token).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub training_doc_id: String,
    pub start: usize,
    pub end: usize,
    pub doc_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    pub source_spans: Vec<SourceSpan>,
    pub pad_count: usize,
}

/// Shuffle documents by seed, join them with a boundary marker after each
/// document and cut the stream into `seq_len` windows. The last window is
/// padded.
pub fn pack_sequences(
    docs: &[TrainingDocument],
    seq_len: usize,
    markers: &Markers,
    tokenizer: &Tokenizer,
    seed: u64,
) -> Vec<PackedSequence> {
    assert!(seq_len > 0, "seq_len must be positive");
    let mut order: Vec<&TrainingDocument> = docs.iter().collect();
    seeded_shuffle_by(&mut order, seed, |d| d.id.as_str());
    let streams: Vec<Vec<u32>> = order
        .par_iter()
        .map(|d| {
            let mut t = d.encode(tokenizer, markers.file_sep);
            t.push(markers.boundary);
            t
        })
        .collect();

    let mut out = Vec::new();
    let mut cur = PackedSequence {
        tokens: Vec::with_capacity(seq_len),
        source_spans: Vec::new(),
        pad_count: 0,
    };
    for (doc, stream) in order.iter().zip(&streams) {
        let mut off = 0;
        while off < stream.len() {
            let room = seq_len - cur.tokens.len();
            let take = room.min(stream.len() - off);
            let start = cur.tokens.len();
            cur.tokens.extend_from_slice(&stream[off..off + take]);
            cur.source_spans.push(SourceSpan {
                training_doc_id: doc.id.clone(),
                start,
                end: start + take,
                doc_offset: off,
            });
            off += take;
            if cur.tokens.len() == seq_len {
                out.push(std::mem::replace(
                    &mut cur,
                    PackedSequence {
                        tokens: Vec::with_capacity(seq_len),
                        source_spans: Vec::new(),
                        pad_count: 0,
                    },
                ));
            }
        }
    }
    if !cur.tokens.is_empty() {
        cur.pad_count = seq_len - cur.tokens.len();
        cur.tokens.resize(seq_len, markers.pad);
        out.push(cur);
    }
    out
}

/// Shard for a training document, by id.
pub fn shard_of(doc_id: &str, seed: u64, num_shards: usize) -> usize {
    (hash_str(doc_id, derive_seed(seed, "shard", 0)) % num_shards.max(1) as u64) as usize
}

/// Assign documents to shards by id and pack each shard independently.
pub fn pack_sharded(
    docs: &[TrainingDocument],
    cfg: &PackConfig,
    tokenizer: &Tokenizer,
    seed: u64,
) -> Vec<Vec<PackedSequence>> {
    let n = cfg.num_shards.max(1);
    let mut shards: Vec<Vec<TrainingDocument>> = vec![Vec::new(); n];
    for d in docs {
        shards[shard_of(&d.id, seed, n)].push(d.clone());
    }
    shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| pack_sequences(s, cfg.seq_len, &cfg.markers, tokenizer, derive_seed(seed, "pack", i as u64)))
        .collect()
}

/// Seed of repetition `i` of a multi-epoch phase.
pub fn repetition_seed(master: u64, i: u32) -> u64 {
    derive_seed(master, "repetition", i as u64)
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    sequence: usize,
    pad_count: usize,
    spans: Vec<SourceSpan>,
}

/// Paths written by [`write_packed_shard`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardFiles {
    pub tokens: PathBuf,
    pub index: PathBuf,
    pub sequences: usize,
}

/// Write `<stem>.bin` (u32 little-endian token ids, sequence after sequence)
/// and `<stem>.index.jsonl` (spans and padding per sequence).
pub fn write_packed_shard(dir: &Path, stem: &str, seqs: &[PackedSequence]) -> io::Result<ShardFiles> {
    let tokens = dir.join(format!("{stem}.bin"));
    let index = dir.join(format!("{stem}.index.jsonl"));
    let mut f = AtomicFile::create(&tokens)?;
    {
        let mut w = BufWriter::new(&mut f);
        for s in seqs {
            for t in &s.tokens {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    f.commit()?;
    write_jsonl(
        &index,
        seqs.iter().enumerate().map(|(i, s)| IndexRecord {
            sequence: i,
            pad_count: s.pad_count,
            spans: s.source_spans.clone(),
        }),
    )?;
    Ok(ShardFiles {
        tokens,
        index,
        sequences: seqs.len(),
    })
}

pub fn read_packed_shard(files: &ShardFiles, seq_len: usize) -> io::Result<Vec<PackedSequence>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(&files.tokens)?).read_to_end(&mut bytes)?;
    if bytes.len() % (4 * seq_len) != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "token file is not a whole number of sequences"));
    }
    let index: Vec<IndexRecord> = crate::io::read_jsonl(&files.index)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let seqs: Vec<Vec<u32>> = bytes
        .chunks_exact(4 * seq_len)
        .map(|c| c.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect())
        .collect();
    if seqs.len() != index.len() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "index and token file disagree"));
    }
    Ok(seqs
        .into_iter()
        .zip(index)
        .map(|(tokens, r)| PackedSequence {
            tokens,
            source_spans: r.spans,
            pad_count: r.pad_count,
        })
        .collect())
}

/// One line per sequence, markers spelled out.
pub fn write_debug_text(path: &Path, seqs: &[PackedSequence], markers: &Markers) -> io::Result<()> {
    let mut f = AtomicFile::create(path)?;
    {
        let mut w = BufWriter::new(&mut f);
        for (i, s) in seqs.iter().enumerate() {
            write!(w, "#{i} pad={}", s.pad_count)?;
            let body = s.tokens.len() - s.pad_count;
            for &t in &s.tokens[..body] {
                match t {
                    t if t == markers.boundary => write!(w, " <eod>")?,
                    t if t == markers.file_sep => write!(w, " <sep>")?,
                    t => write!(w, " {t}")?,
                }
            }
            if s.pad_count > 0 {
                write!(w, " <pad>x{}", s.pad_count)?;
            }
            writeln!(w)?;
        }
        w.flush()?;
    }
    f.commit()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(id: &str, repo: &str, lang: &str, content: &str) -> CodeDocument {
        CodeDocument::new(
            Some(id.into()),
            repo,
            id,
            LanguageTag::new(lang),
            content,
            &Tokenizer::approximate(),
        )
    }

    #[test]
    fn grouping_definitions() {
        let files = vec![
            file("a.py", "r", "Python", "a = 1"),
            file("b.py", "r", "Python", "b = 2"),
            file("c.go", "r", "Go", "package c"),
        ];
        let by_repo = group_documents(files.clone(), GroupingStrategy::ByRepo, 0);
        assert_eq!(by_repo.len(), 1);
        assert_eq!(by_repo[0].language_scope, LanguageScope::Mixed);
        assert_eq!(by_repo[0].member_files.len(), 3);

        let by_lang = group_documents(files, GroupingStrategy::ByLanguageAndRepo, 0);
        assert_eq!(by_lang.len(), 2);
        assert_eq!(by_lang[0].id, "Go::r");
        assert_eq!(by_lang[0].member_files, ["c.go"]);
        assert_eq!(by_lang[1].language_scope, LanguageScope::Single(LanguageTag::python()));
        let mut py = by_lang[1].member_files.clone();
        py.sort();
        assert_eq!(py, ["a.py", "b.py"]);

        assert!(group_documents(Vec::new(), GroupingStrategy::ByRepo, 0).is_empty());
    }

    #[test]
    fn member_order_depends_on_seed_only() {
        let files: Vec<_> = (0..12).map(|i| file(&format!("f{i}"), "r", "Go", "x")).collect();
        let mut rev = files.clone();
        rev.reverse();
        let a = group_documents(files.clone(), GroupingStrategy::ByRepo, 3);
        let b = group_documents(rev, GroupingStrategy::ByRepo, 3);
        assert_eq!(a, b);
        let c = group_documents(files, GroupingStrategy::ByRepo, 4);
        assert_ne!(a[0].member_files, c[0].member_files);
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let tok = Tokenizer::approximate();
        let docs = group_documents(vec![file("a", "r", "Go", "a b c d e f g")], GroupingStrategy::ByRepo, 0);
        let n = docs[0].encode(&tok, 2).len();
        let seqs = pack_sequences(&docs, n + 1, &Markers::default(), &tok, 0);
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].pad_count, 0);
        assert_eq!(*seqs[0].tokens.last().unwrap(), 1);
        assert!(pack_sequences(&[], 8, &Markers::default(), &tok, 0).is_empty());
    }

    #[test]
    fn straddling_and_spans() {
        let tok = Tokenizer::approximate();
        let files = vec![
            file("a", "r1", "Go", "a b c d e"),
            file("b", "r2", "Go", "f g h"),
        ];
        let docs = group_documents(files, GroupingStrategy::ByRepo, 0);
        let seqs = pack_sequences(&docs, 4, &Markers::default(), &tok, 9);
        // 6 + 4 tokens including boundaries -> 3 windows, 2 pads
        assert_eq!(seqs.len(), 3);
        assert_eq!(seqs[2].pad_count, 2);
        for s in &seqs {
            let covered: usize = s.source_spans.iter().map(|sp| sp.end - sp.start).sum();
            assert_eq!(covered + s.pad_count, 4);
        }
    }

    #[test]
    fn shard_files_roundtrip() {
        let tok = Tokenizer::approximate();
        let files: Vec<_> = (0..6).map(|i| file(&format!("f{i}"), &format!("r{i}"), "Go", "x y z w")).collect();
        let docs = group_documents(files, GroupingStrategy::ByRepo, 0);
        let seqs = pack_sequences(&docs, 7, &Markers::default(), &tok, 1);
        let dir = tempfile::tempdir().unwrap();
        let files = write_packed_shard(dir.path(), "shard-00000", &seqs).unwrap();
        assert_eq!(read_packed_shard(&files, 7).unwrap(), seqs);
        let dbg = dir.path().join("debug.txt");
        write_debug_text(&dbg, &seqs, &Markers::default()).unwrap();
        let text = std::fs::read_to_string(dbg).unwrap();
        assert_eq!(text.lines().count(), seqs.len());
        assert!(text.contains("<eod>"));
    }
}
