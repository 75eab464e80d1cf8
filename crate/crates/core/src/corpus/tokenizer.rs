//! Pluggable token counting.
//!
//! The default `approximate-regex` mode needs no assets: a token is either a
//! maximal run of word characters (alphanumeric or `_`) or a single
//! non-whitespace symbol character. `external-vocab` loads a newline-delimited
//! vocabulary and splits each of those pieces by greedy longest match.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::hashing::hash_str;

/// Token ids below this value are reserved for special markers in
/// `approximate-regex` mode.
pub const RESERVED_IDS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    ApproximateRegex,
    ExternalVocab,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: u32,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

fn default_vocab_size() -> u32 {
    64_000
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        Self {
            kind: TokenizerKind::ApproximateRegex,
            vocab_size: default_vocab_size(),
            parameters: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("external-vocab tokenizer requires the `vocab_path` parameter")]
    MissingVocabPath,
    #[error("cannot read vocabulary {path}: {source}")]
    VocabUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary {0} is empty")]
    EmptyVocab(PathBuf),
    #[error("vocab_size {0} is too small (need more than {RESERVED_IDS})")]
    VocabTooSmall(u32),
    #[error("invalid tokenizer parameter {key}={value}")]
    BadParameter { key: String, value: String },
}

#[inline]
pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Split `text` into approximate-regex pieces.
pub fn pre_tokenize(text: &str) -> PreTokens<'_> {
    PreTokens { text, pos: 0 }
}

/// Iterator over approximate-regex pieces of a string.
pub struct PreTokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Iterator for PreTokens<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let rest = &self.text[self.pos..];
        let mut chars = rest.char_indices();
        let (start, first) = loop {
            let (i, c) = chars.next()?;
            if !c.is_whitespace() {
                break (i, c);
            }
        };
        let end = if is_word_char(first) {
            let mut end = rest.len();
            for (i, c) in chars {
                if !is_word_char(c) {
                    end = i;
                    break;
                }
            }
            end
        } else {
            start + first.len_utf8()
        };
        let piece = &rest[start..end];
        self.pos += end;
        Some(piece)
    }
}

/// A tokenizer built from a [`TokenizerSpec`]; holds any loaded resources.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    spec: TokenizerSpec,
    vocab: Option<Vocab>,
}

#[derive(Debug, Clone)]
struct Vocab {
    ids: HashMap<String, u32>,
    max_piece_chars: usize,
    unk_id: u32,
}

impl Tokenizer {
    pub fn from_spec(spec: &TokenizerSpec) -> Result<Self, TokenizerError> {
        let vocab = match spec.kind {
            TokenizerKind::ApproximateRegex => {
                if spec.vocab_size <= RESERVED_IDS {
                    return Err(TokenizerError::VocabTooSmall(spec.vocab_size));
                }
                None
            }
            TokenizerKind::ExternalVocab => Some(load_vocab(spec)?),
        };
        Ok(Self {
            spec: spec.clone(),
            vocab,
        })
    }

    /// Default asset-free tokenizer.
    pub fn approximate() -> Self {
        Self {
            spec: TokenizerSpec::default(),
            vocab: None,
        }
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    pub fn count(&self, text: &str) -> usize {
        match &self.vocab {
            None => pre_tokenize(text).count(),
            Some(v) => pre_tokenize(text).map(|p| v.split(p, |_| ())).sum(),
        }
    }

    /// Encode to token ids. The length always equals [`Tokenizer::count`].
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_into(text, &mut out);
        out
    }

    pub fn encode_into(&self, text: &str, out: &mut Vec<u32>) {
        match &self.vocab {
            None => {
                let span = self.spec.vocab_size - RESERVED_IDS;
                out.extend(
                    pre_tokenize(text)
                        .map(|p| (hash_str(p, 0) % span as u64) as u32 + RESERVED_IDS),
                );
            }
            Some(v) => {
                for piece in pre_tokenize(text) {
                    v.split(piece, |id| out.push(id));
                }
            }
        }
    }
}

impl Vocab {
    /// Greedy longest-match split of one piece; returns the token count.
    fn split(&self, piece: &str, mut emit: impl FnMut(u32)) -> usize {
        let bounds: Vec<usize> = piece
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(piece.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut at = 0;
        let mut n = 0;
        while at < n_chars {
            let longest = (at + self.max_piece_chars).min(n_chars);
            let mut matched = None;
            for end in (at + 1..=longest).rev() {
                if let Some(&id) = self.ids.get(&piece[bounds[at]..bounds[end]]) {
                    matched = Some((end, id));
                    break;
                }
            }
            let (end, id) = matched.unwrap_or((at + 1, self.unk_id));
            emit(id);
            n += 1;
            at = end;
        }
        n
    }
}

fn load_vocab(spec: &TokenizerSpec) -> Result<Vocab, TokenizerError> {
    let path = PathBuf::from(
        spec.parameters
            .get("vocab_path")
            .ok_or(TokenizerError::MissingVocabPath)?,
    );
    let text = fs::read_to_string(&path).map_err(|source| TokenizerError::VocabUnreadable {
        path: path.clone(),
        source,
    })?;
    let mut ids = HashMap::new();
    let mut max_piece_chars = 0;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        max_piece_chars = max_piece_chars.max(line.chars().count());
        ids.entry(line.to_string()).or_insert(i as u32);
    }
    if ids.is_empty() {
        return Err(TokenizerError::EmptyVocab(path));
    }
    let unk_id = match spec.parameters.get("unk_id") {
        Some(v) => v.parse().map_err(|_| TokenizerError::BadParameter {
            key: "unk_id".into(),
            value: v.clone(),
        })?,
        None => 0,
    };
    Ok(Vocab {
        ids,
        max_piece_chars,
        unk_id,
    })
}

/// Count tokens of `content` under `spec`.
pub fn count_tokens(content: &str, spec: &TokenizerSpec) -> Result<usize, TokenizerError> {
    Ok(Tokenizer::from_spec(spec)?.count(content))
}
