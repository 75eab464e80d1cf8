use serde::{Deserialize, Serialize};

/// Which slices of a long document get scored.
///
/// Documents of at most `chunk_chars` characters are scored whole. Longer
/// ones are scored at three windows of `chunk_chars` characters: the top,
/// the bottom, and one centred on the midpoint. Windows may overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkPolicy {
    pub chunk_chars: usize,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self { chunk_chars: 2000 }
    }
}

impl ChunkPolicy {
    pub fn new(chunk_chars: usize) -> Self {
        assert!(chunk_chars > 0, "chunk_chars must be positive");
        Self { chunk_chars }
    }

    /// Character offsets `[start, end)` of each chunk.
    pub fn char_ranges(&self, n_chars: usize) -> Vec<(usize, usize)> {
        let c = self.chunk_chars;
        if n_chars <= c {
            return vec![(0, n_chars)];
        }
        let mid_start = (n_chars - c) / 2;
        vec![(0, c), (mid_start, mid_start + c), (n_chars - c, n_chars)]
    }

    pub fn chunks<'a>(&self, content: &'a str) -> Vec<&'a str> {
        let bounds: Vec<usize> = content
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(content.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        self.char_ranges(n_chars)
            .into_iter()
            .map(|(s, e)| &content[bounds[s]..bounds[e]])
            .collect()
    }
}
