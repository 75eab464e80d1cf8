//! Pipeline configuration: a versioned TOML file plus `key=value`
//! overrides.

use std::path::{Path, PathBuf};

use codecurate_core::annotator::{ChunkPolicy, FeatureSpec, Hyperparameters, RecipeName};
use codecurate_core::corpus::{BasicFilter, ErrorPolicy};
use codecurate_core::decontam::DecontamConfig;
use codecurate_core::dedupe::NearDedupConfig;
use codecurate_core::eval::{Correlation, DEFAULT_NEGATIVES};
use codecurate_core::hashing::sha256_hex;
use codecurate_core::packing::{GroupingStrategy, Markers, PackConfig, DEFAULT_SEQ_LEN};
use codecurate_core::schedule::{BATCH_SIZE, SEQ_LEN};
use codecurate_core::selection::PYTHON_TARGET_SHARE;
use codecurate_core::synth::{CollectConfig, HttpClientConfig, MockMode, DEFAULT_MAX_SEED_CHARS, DEFAULT_TEMPLATE};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub work_dir: PathBuf,
    /// Corpus manifest listing the raw shards.
    pub manifest: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub ingest: IngestBlock,
    #[serde(default)]
    pub dedup: DedupBlock,
    #[serde(default)]
    pub decontam: DecontamBlock,
    #[serde(default)]
    pub annotator: AnnotatorBlock,
    #[serde(default)]
    pub selection: SelectionBlock,
    #[serde(default)]
    pub grouping: GroupingBlock,
    #[serde(default)]
    pub schedules: ScheduleBlock,
    #[serde(default)]
    pub eval: EvalBlock,
    #[serde(default)]
    pub synthetic: SyntheticBlock,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestBlock {
    pub max_line_length: Option<usize>,
    pub min_alpha_ratio: Option<f64>,
    pub on_error: ErrorPolicy,
}

impl IngestBlock {
    pub fn filter(&self) -> BasicFilter {
        BasicFilter {
            max_line_length: self.max_line_length,
            min_alpha_ratio: self.min_alpha_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupBlock {
    pub exact: bool,
    pub near: bool,
    pub threshold: f64,
    pub signature_len: usize,
    pub bands: usize,
    pub shingle_size: usize,
}

impl Default for DedupBlock {
    fn default() -> Self {
        let n = NearDedupConfig::default();
        Self {
            exact: true,
            near: true,
            threshold: n.threshold,
            signature_len: n.signature_len,
            bands: n.bands,
            shingle_size: n.shingle_size,
        }
    }
}

impl DedupBlock {
    pub fn near_config(&self, seed: u64) -> NearDedupConfig {
        NearDedupConfig {
            threshold: self.threshold,
            signature_len: self.signature_len,
            bands: self.bands,
            shingle_size: self.shingle_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecontamBlock {
    /// Record-per-line benchmark file. Without it decontamination is a
    /// pass-through.
    pub benchmarks: Option<PathBuf>,
    pub ngram: usize,
    pub min_hits: usize,
    pub index_prompts: bool,
    pub index_solutions: bool,
}

impl Default for DecontamBlock {
    fn default() -> Self {
        let d = DecontamConfig::default();
        Self {
            benchmarks: None,
            ngram: d.ngram,
            min_hits: d.min_hits,
            index_prompts: d.index_prompts,
            index_solutions: d.index_solutions,
        }
    }
}

impl DecontamBlock {
    pub fn index_config(&self) -> DecontamConfig {
        DecontamConfig {
            ngram: self.ngram,
            min_hits: self.min_hits,
            index_prompts: self.index_prompts,
            index_solutions: self.index_solutions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorBlock {
    /// One of Ann-EDU, Ann-INS, Ann-HQ, Ann-BEST; ignored when
    /// `recipe_file` is set.
    pub recipe: String,
    /// A recipe in JSON or TOML.
    pub recipe_file: Option<PathBuf>,
    pub hq_files: Option<PathBuf>,
    pub instruct: Option<PathBuf>,
    pub edu_labels: Option<PathBuf>,
    /// Multiplier on the recipe's example counts.
    pub scale: f64,
    pub features: FeatureSpec,
    pub chunk: ChunkPolicy,
    pub hyper: Hyperparameters,
}

impl Default for AnnotatorBlock {
    fn default() -> Self {
        Self {
            recipe: RecipeName::AnnBest.to_string(),
            recipe_file: None,
            hq_files: None,
            instruct: None,
            edu_labels: None,
            scale: 1.0,
            features: FeatureSpec::default(),
            chunk: ChunkPolicy::default(),
            hyper: Hyperparameters::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionBlock {
    pub horizon_tokens: u64,
    pub repetitions: i64,
}

impl Default for SelectionBlock {
    fn default() -> Self {
        Self {
            horizon_tokens: 50_000_000_000,
            repetitions: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingBlock {
    pub strategy: GroupingStrategy,
    pub seq_len: usize,
    pub markers: Markers,
    pub num_shards: usize,
    /// Also write a human-readable rendering of each shard.
    pub debug_text: bool,
}

impl Default for GroupingBlock {
    fn default() -> Self {
        Self {
            strategy: GroupingStrategy::ByLanguageAndRepo,
            seq_len: DEFAULT_SEQ_LEN,
            markers: Markers::default(),
            num_shards: 1,
            debug_text: false,
        }
    }
}

impl GroupingBlock {
    pub fn pack_config(&self) -> PackConfig {
        PackConfig {
            seq_len: self.seq_len,
            markers: self.markers,
            num_shards: self.num_shards,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleBlock {
    pub phase1_tokens: u64,
    /// Defaults to the selection horizon.
    pub phase2_tokens: Option<u64>,
    pub phase3_tokens: u64,
    pub seq_len: u64,
    pub batch_size: u64,
    pub stride: usize,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        Self {
            phase1_tokens: 500_000_000_000,
            phase2_tokens: None,
            phase3_tokens: 5_000_000_000,
            seq_len: SEQ_LEN,
            batch_size: BATCH_SIZE,
            stride: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    /// Defaults to `decontam.benchmarks`.
    pub benchmarks: Option<PathBuf>,
    pub n_negatives: usize,
    pub pass_rates: Option<PathBuf>,
    pub correlation: Correlation,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            benchmarks: None,
            n_negatives: DEFAULT_NEGATIVES,
            pass_rates: None,
            correlation: Correlation::Spearman,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBlock {
    pub template: String,
    pub template_file: Option<PathBuf>,
    pub max_seed_chars: usize,
    pub seed_budget_tokens: u64,
    pub python_share: f64,
    /// Requested synthetic token share, recorded in the assembly manifest.
    pub target_share: Option<f64>,
    pub client: ClientKind,
    pub mock: MockMode,
    pub http: HttpClientConfig,
    pub collect: CollectConfig,
}

impl Default for SyntheticBlock {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.into(),
            template_file: None,
            max_seed_chars: DEFAULT_MAX_SEED_CHARS,
            seed_budget_tokens: 2_000_000_000,
            python_share: PYTHON_TARGET_SHARE,
            target_share: None,
            client: ClientKind::Mock,
            mock: MockMode::EchoTransform,
            http: HttpClientConfig::default(),
            collect: CollectConfig::default(),
        }
    }
}

/// Set `dotted.key` in `table`, creating intermediate tables. The value is
/// parsed as a TOML value, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("override {spec:?} has an empty key")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

impl PipelineConfig {
    /// Read `path`, apply overrides, resolve relative paths against the
    /// file's directory and validate.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    pub fn from_toml(text: &str, base: &Path, overrides: &[String]) -> CliResult<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        rebase(base, &mut self.work_dir);
        rebase(base, &mut self.manifest);
        rebase_opt(base, &mut self.decontam.benchmarks);
        rebase_opt(base, &mut self.annotator.recipe_file);
        rebase_opt(base, &mut self.annotator.hq_files);
        rebase_opt(base, &mut self.annotator.instruct);
        rebase_opt(base, &mut self.annotator.edu_labels);
        rebase_opt(base, &mut self.eval.benchmarks);
        rebase_opt(base, &mut self.eval.pass_rates);
        rebase_opt(base, &mut self.synthetic.template_file);
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!("unsupported config version {}", self.version));
        }
        if self.workers == 0 {
            return fail("workers must be positive".into());
        }
        if let Some(r) = self.ingest.min_alpha_ratio {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("ingest.min_alpha_ratio {r} outside [0, 1]"));
            }
        }
        self.dedup
            .near_config(0)
            .validate()
            .map_err(|e| CliError::Config(format!("dedup: {e}")))?;
        if self.decontam.ngram < 3 {
            return fail(format!("decontam.ngram must be at least 3, got {}", self.decontam.ngram));
        }
        if !(self.decontam.index_prompts || self.decontam.index_solutions) {
            return fail("decontam indexes neither prompts nor solutions".into());
        }
        let a = &self.annotator;
        a.features
            .validate()
            .map_err(|e| CliError::Config(format!("annotator.features: {e}")))?;
        a.hyper
            .validate()
            .map_err(|e| CliError::Config(format!("annotator.hyper: {e}")))?;
        if a.chunk.chunk_chars == 0 {
            return fail("annotator.chunk.chunk_chars must be positive".into());
        }
        if !(a.scale.is_finite() && a.scale > 0.0) {
            return fail(format!("annotator.scale {} must be positive", a.scale));
        }
        if a.recipe_file.is_none() && matches!(RecipeName::parse(&a.recipe), RecipeName::Custom(_)) {
            return fail(format!("unknown annotator recipe {:?} and no recipe_file", a.recipe));
        }
        let s = &self.selection;
        if s.repetitions < 1 {
            return fail(format!("selection.repetitions must be at least 1, got {}", s.repetitions));
        }
        if s.horizon_tokens / (s.repetitions as u64) == 0 {
            return fail("selection.horizon_tokens leaves no unique budget".into());
        }
        let g = &self.grouping;
        if g.seq_len == 0 || g.num_shards == 0 {
            return fail("grouping.seq_len and grouping.num_shards must be positive".into());
        }
        let sc = &self.schedules;
        if sc.stride == 0 || sc.seq_len == 0 || sc.batch_size == 0 {
            return fail("schedules.stride, seq_len and batch_size must be positive".into());
        }
        if sc.phase1_tokens == 0 || sc.phase3_tokens == 0 || sc.phase2_tokens == Some(0) {
            return fail("schedule token horizons must be positive".into());
        }
        if self.eval.n_negatives == 0 {
            return fail("eval.n_negatives must be positive".into());
        }
        let y = &self.synthetic;
        if !(y.python_share > 0.0 && y.python_share < 1.0) {
            return fail(format!("synthetic.python_share {} must lie in (0, 1)", y.python_share));
        }
        if let Some(t) = y.target_share {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("synthetic.target_share {t} outside [0, 1]"));
            }
        }
        if y.max_seed_chars == 0 || y.seed_budget_tokens == 0 {
            return fail("synthetic.max_seed_chars and seed_budget_tokens must be positive".into());
        }
        if y.collect.max_attempts == 0 || y.collect.max_in_flight == 0 {
            return fail("synthetic.collect.max_attempts and max_in_flight must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. The work directory is left out:
    /// it locates outputs but does not influence them.
    pub fn content_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.work_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }

    pub fn benchmarks_for_eval(&self) -> Option<&Path> {
        self.eval.benchmarks.as_deref().or(self.decontam.benchmarks.as_deref())
    }

    pub fn phase2_tokens(&self) -> u64 {
        self.schedules.phase2_tokens.unwrap_or(self.selection.horizon_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "work_dir = \"out\"\nmanifest = \"corpus/manifest.json\"\n";

    #[test]
    fn defaults_and_relative_paths() {
        let c = PipelineConfig::from_toml(MIN, Path::new("/cfg"), &[]).unwrap();
        assert_eq!(c.work_dir, PathBuf::from("/cfg/out"));
        assert_eq!(c.manifest, PathBuf::from("/cfg/corpus/manifest.json"));
        assert_eq!(c.selection.repetitions, 4);
        assert_eq!(c.grouping.seq_len, 8192);
        assert_eq!(c.phase2_tokens(), 50_000_000_000);
    }

    #[test]
    fn overrides_parse_values_and_create_tables() {
        let o = [
            "selection.repetitions=2".to_string(),
            "annotator.hq_files=data/hq.jsonl".to_string(),
            "grouping.strategy=\"by_repo\"".to_string(),
            "annotator.features.dim_log2=12".to_string(),
        ];
        let c = PipelineConfig::from_toml(MIN, Path::new("/cfg"), &o).unwrap();
        assert_eq!(c.selection.repetitions, 2);
        assert_eq!(c.annotator.hq_files, Some(PathBuf::from("/cfg/data/hq.jsonl")));
        assert_eq!(c.grouping.strategy, GroupingStrategy::ByRepo);
        assert_eq!(c.annotator.features.dim_log2, 12);
        assert!(matches!(
            PipelineConfig::from_toml(MIN, Path::new("/"), &["novalue".into()]),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_blocks() {
        for o in [
            "selection.repetitions=0",
            "dedup.bands=7",
            "decontam.ngram=2",
            "synthetic.python_share=1.0",
            "annotator.recipe=\"Ann-XYZ\"",
            "typo_block.x=1",
        ] {
            let r = PipelineConfig::from_toml(MIN, Path::new("/"), &[o.to_string()]);
            assert!(matches!(r, Err(CliError::Config(_))), "{o}");
        }
    }

    #[test]
    fn any_parameter_change_changes_hash() {
        let base = PipelineConfig::from_toml(MIN, Path::new("/"), &[]).unwrap();
        let h = base.content_hash();
        for o in ["master_seed=1", "dedup.threshold=0.9", "grouping.num_shards=2", "schedules.stride=10"] {
            let c = PipelineConfig::from_toml(MIN, Path::new("/"), &[o.to_string()]).unwrap();
            assert_ne!(c.content_hash(), h, "{o}");
        }
        let moved = PipelineConfig::from_toml(MIN, Path::new("/"), &["work_dir=\"elsewhere\"".into()]).unwrap();
        assert_eq!(moved.content_hash(), h);
    }
}
