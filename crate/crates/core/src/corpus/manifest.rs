use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LanguageSet, TokenizerSpec, DEFAULT_LANGUAGES};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest declares no languages")]
    NoLanguages,
}

/// Lists the shards of a corpus together with the tokenizer, the declared
/// language set and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub shards: Vec<PathBuf>,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
    #[serde(default = "default_languages")]
    pub languages: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

fn default_languages() -> Vec<String> {
    DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect()
}

impl CorpusManifest {
    pub fn new(shards: Vec<PathBuf>) -> Self {
        Self {
            shards,
            tokenizer: TokenizerSpec::default(),
            languages: default_languages(),
            seed: 0,
        }
    }

    /// Load a JSON manifest. Relative shard paths resolve against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let bytes = std::fs::read(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: CorpusManifest =
            serde_json::from_slice(&bytes).map_err(|source| ManifestError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        if m.languages.is_empty() {
            return Err(ManifestError::NoLanguages);
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut m.shards {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(m)
    }

    pub fn language_set(&self) -> LanguageSet {
        LanguageSet::new(self.languages.iter().map(String::as_str))
    }
}
