//! Run manifest and atomic stage output directories.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use codecurate_core::hashing::sha256_hex;
use codecurate_core::io::{read_json, write_json};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Output file (relative to the work directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub documents: u64,
    pub tokens: u64,
}

/// Hashes tying every stage output to the config and inputs that produced
/// it. Wall-clock timings live in `logs/run_timings.jsonl` so that the
/// manifest itself is reproducible.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub input_shards: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn path(work_dir: &Path) -> PathBuf {
        work_dir.join(MANIFEST_FILE)
    }

    /// The manifest in `work_dir`, or a fresh one.
    pub fn load_or_new(work_dir: &Path) -> io::Result<Self> {
        let p = Self::path(work_dir);
        if !p.exists() {
            return Ok(Self::default());
        }
        read_json(&p).map_err(io::Error::other)
    }

    pub fn save(&self, work_dir: &Path) -> io::Result<()> {
        write_json(&Self::path(work_dir), self)
    }
}

/// Files under `dir`, relative to `root`, in sorted order.
pub fn list_files(root: &Path, dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn rel_key(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// A stage's output directory, written under a staging name and renamed
/// into place on [`StagedDir::commit`]. Dropping it uncommitted removes the
/// staging directory.
pub struct StagedDir {
    work_dir: PathBuf,
    target: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl StagedDir {
    pub fn begin(work_dir: &Path, rel: &str) -> io::Result<Self> {
        let staging = work_dir
            .join(".staging")
            .join(format!("{}.{}", rel.replace('/', "__"), std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self {
            work_dir: work_dir.to_path_buf(),
            target: work_dir.join(rel),
            staging,
            committed: false,
        })
    }

    /// Where the stage writes its files.
    pub fn path(&self) -> &Path {
        &self.staging
    }

    /// Swap the staging directory into place and hash what it contains.
    pub fn commit(mut self) -> io::Result<BTreeMap<String, String>> {
        if let Some(parent) = self.target.parent() {
            fs::create_dir_all(parent)?;
        }
        if self.target.exists() {
            let old = self.staging.with_extension("old");
            fs::rename(&self.target, &old)?;
            fs::rename(&self.staging, &self.target)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&self.staging, &self.target)?;
        }
        self.committed = true;
        let mut hashes = BTreeMap::new();
        for rel in list_files(&self.work_dir, &self.target)? {
            hashes.insert(rel_key(&rel), hash_file(&self.work_dir.join(&rel))?);
        }
        Ok(hashes)
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
