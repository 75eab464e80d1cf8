//! The thirteen pipeline stages. Each reads its inputs from the work
//! directory, writes one output directory atomically and records the output
//! hashes in the run manifest.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use codecurate_core::annotator::{
    score_corpus, train_annotator, AnnotatorModel, RecipeName, SourceKind, TrainingRecipe,
};
use codecurate_core::corpus::{
    ingest_manifest, ingest_shard, write_shard, CodeDocument, CorpusManifest, ErrorPolicy, LanguageSet,
    ScoreRecord, Tokenizer,
};
use codecurate_core::decontam::{build_ngram_index, decontaminate, load_benchmarks, NgramIndex};
use codecurate_core::dedupe::{exact_dedup, near_dedup};
use codecurate_core::eval::{build_validation_set, correlation_report, load_pass_rates, roc_auc, EvalError, Sample};
use codecurate_core::hashing::derive_seed;
use codecurate_core::io::{read_json, read_jsonl, write_json, write_jsonl};
use codecurate_core::packing::{
    group_documents, pack_sharded, repetition_seed, write_debug_text, write_packed_shard, GroupingStrategy,
    LanguageScope, TrainingDocument,
};
use codecurate_core::schedule::{iterations_for_tokens, write_schedule, SchedulePhase};
use codecurate_core::selection::{
    plan_repetitions, reweight_python, select_top_percentile, MixRatio, PythonReweighting, ReweightScope,
    Selection, SelectionManifest,
};
use codecurate_core::synth::{
    assemble_phase3_corpus, collect_responses, emit_generation_requests, select_seeds, GenerationClient,
    GenerationRequest, GenerationResponse, HttpClient, MockClient, PromptTemplate,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ClientKind, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_file, RunManifest, StageRecord, StagedDir, TOOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Dedup,
    Decontam,
    TrainAnnotator,
    Score,
    Select,
    Group,
    Pack,
    Schedule,
    EvalAnnotator,
    EmitSeeds,
    CollectSynth,
    Assemble,
}

impl Stage {
    pub const ALL: [Stage; 13] = [
        Stage::Ingest,
        Stage::Dedup,
        Stage::Decontam,
        Stage::TrainAnnotator,
        Stage::Score,
        Stage::Select,
        Stage::Group,
        Stage::Pack,
        Stage::Schedule,
        Stage::EvalAnnotator,
        Stage::EmitSeeds,
        Stage::CollectSynth,
        Stage::Assemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Dedup => "dedup",
            Stage::Decontam => "decontam",
            Stage::TrainAnnotator => "train-annotator",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::Group => "group",
            Stage::Pack => "pack",
            Stage::Schedule => "schedule",
            Stage::EvalAnnotator => "eval-annotator",
            Stage::EmitSeeds => "emit-seeds",
            Stage::CollectSynth => "collect-synth",
            Stage::Assemble => "assemble",
        }
    }

    /// Whether the stage runs per pretraining phase.
    pub fn is_phased(self) -> bool {
        matches!(self, Stage::Group | Stage::Pack | Stage::Schedule)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                CliError::Usage(format!("unknown stage {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Phase {
    One,
    Two,
    Three,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
            Phase::Three => 3,
        }
    }

    pub fn from_number(n: u8) -> CliResult<Self> {
        match n {
            1 => Ok(Phase::One),
            2 => Ok(Phase::Two),
            3 => Ok(Phase::Three),
            _ => Err(CliError::Usage(format!("phase must be 1, 2 or 3, got {n}"))),
        }
    }

    /// The corpus a phase trains on and the stage that produces it.
    fn corpus(self) -> (&'static str, &'static str) {
        match self {
            Phase::One => ("decontam/corpus.jsonl", "decontam"),
            Phase::Two => ("select/corpus.jsonl", "select"),
            Phase::Three => ("assemble/corpus.jsonl", "assemble"),
        }
    }
}

/// Machine-readable outcome of one stage, printed on standard output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub documents: u64,
    pub tokens: u64,
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    config_hash: String,
    corpus_manifest: CorpusManifest,
    tokenizer: Tokenizer,
    languages: LanguageSet,
    pool: rayon::ThreadPool,
}

fn stage_err<E: Into<anyhow::Error>>(stage: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::stage(stage, e)
}

fn tokens_of(docs: &[CodeDocument]) -> u64 {
    docs.iter().map(|d| d.token_count as u64).sum()
}

fn sorted_ids<'a>(ids: impl IntoIterator<Item = &'a String>) -> Vec<&'a String> {
    let set: BTreeSet<&String> = ids.into_iter().collect();
    set.into_iter().collect()
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> CliResult<Self> {
        let corpus_manifest = CorpusManifest::load(&config.manifest).map_err(|e| CliError::Config(e.to_string()))?;
        let tokenizer = Tokenizer::from_spec(&corpus_manifest.tokenizer).map_err(|e| CliError::Config(e.to_string()))?;
        let languages = corpus_manifest.language_set();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            config_hash: config.content_hash(),
            config,
            corpus_manifest,
            tokenizer,
            languages,
            pool,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn work_dir(&self) -> &Path {
        &self.config.work_dir
    }

    pub(crate) fn seed(&self, tag: &str, index: u64) -> u64 {
        derive_seed(self.config.master_seed, tag, index)
    }

    pub(crate) fn require(&self, stage: &str, rel: &str, run_first: &str) -> CliResult<PathBuf> {
        let p = self.work_dir().join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Upstream {
                stage: stage.to_string(),
                missing: p,
                run_first: run_first.to_string(),
            })
        }
    }

    pub(crate) fn read_corpus(&self, stage: &str, path: &Path) -> CliResult<Vec<CodeDocument>> {
        ingest_shard(path, &self.languages, &self.tokenizer, ErrorPolicy::FailFast)
            .map(|o| o.documents)
            .map_err(stage_err(stage))
    }

    pub(crate) fn begin(&self, key: &str) -> CliResult<StagedDir> {
        StagedDir::begin(self.work_dir(), key).map_err(stage_err(key))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn finish(
        &self,
        key: &str,
        staged: StagedDir,
        documents: u64,
        tokens: u64,
        details: Value,
        started: Instant,
        inputs: Option<BTreeMap<String, String>>,
    ) -> CliResult<StageSummary> {
        let outputs = staged.commit().map_err(stage_err(key))?;
        let wd = self.work_dir();
        let mut m = RunManifest::load_or_new(wd).map_err(stage_err(key))?;
        m.tool_version = TOOL_VERSION.to_string();
        m.config_hash = self.config_hash.clone();
        if let Some(i) = inputs {
            m.input_shards = i;
        }
        m.stages.insert(
            key.to_string(),
            StageRecord {
                config_hash: self.config_hash.clone(),
                outputs: outputs.clone(),
                documents,
                tokens,
            },
        );
        m.save(wd).map_err(stage_err(key))?;
        self.log_timing(key, started).map_err(stage_err(key))?;
        log::info!("{key}: {documents} documents, {tokens} tokens, {} files", outputs.len());
        Ok(StageSummary {
            stage: key.to_string(),
            documents,
            tokens,
            outputs,
            details,
        })
    }

    fn log_timing(&self, key: &str, started: Instant) -> std::io::Result<()> {
        let dir = self.work_dir().join("logs");
        std::fs::create_dir_all(&dir)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("run_timings.jsonl"))?;
        let line = json!({"stage": key, "elapsed_ms": started.elapsed().as_millis() as u64});
        writeln!(f, "{line}")
    }

    /// Run one stage. `phase` matters only for group, pack and schedule.
    pub fn run_stage(&self, stage: Stage, phase: Phase) -> CliResult<StageSummary> {
        log::info!("running {stage}{}", if stage.is_phased() { format!(" (phase {})", phase.number()) } else { String::new() });
        std::fs::create_dir_all(self.work_dir()).map_err(stage_err(stage.name()))?;
        self.pool.install(|| match stage {
            Stage::Ingest => self.ingest(),
            Stage::Dedup => self.dedup(),
            Stage::Decontam => self.decontam(),
            Stage::TrainAnnotator => self.train_default(),
            Stage::Score => self.score(),
            Stage::Select => self.select(),
            Stage::Group => self.group(phase),
            Stage::Pack => self.pack(phase),
            Stage::Schedule => self.schedule(phase),
            Stage::EvalAnnotator => self.eval_default(),
            Stage::EmitSeeds => self.emit_seeds(),
            Stage::CollectSynth => self.collect_synth(),
            Stage::Assemble => self.assemble(),
        })
    }

    /// Run `f` inside the configured worker pool.
    pub(crate) fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        self.pool.install(f)
    }

    fn ingest(&self) -> CliResult<StageSummary> {
        let key = "ingest";
        let t = Instant::now();
        let out = ingest_manifest(&self.corpus_manifest, &self.config.ingest.filter(), self.config.ingest.on_error)
            .map_err(stage_err(key))?;
        let mut inputs = BTreeMap::new();
        let base = self.config.manifest.parent().unwrap_or(Path::new(""));
        for s in &self.corpus_manifest.shards {
            let name = s.strip_prefix(base).unwrap_or(s).display().to_string();
            inputs.insert(name, hash_file(s).map_err(stage_err(key))?);
        }
        let dir = self.begin(key)?;
        write_shard(&dir.path().join("corpus.jsonl"), &out.documents).map_err(stage_err(key))?;
        write_jsonl(&dir.path().join("errors.jsonl"), &out.errors).map_err(stage_err(key))?;
        let details = json!({"rejected": out.errors.len(), "shards": self.corpus_manifest.shards.len()});
        self.finish(key, dir, out.documents.len() as u64, tokens_of(&out.documents), details, t, Some(inputs))
    }

    fn dedup(&self) -> CliResult<StageSummary> {
        let key = "dedup";
        let t = Instant::now();
        let mut docs = self.read_corpus(key, &self.require(key, "ingest/corpus.jsonl", "ingest")?)?;
        let before = docs.len();
        let mut report = Vec::new();
        let (mut exact, mut near) = (0, 0);
        if self.config.dedup.exact {
            let o = exact_dedup(docs);
            exact = o.dropped.len();
            report.extend(o.dropped);
            docs = o.kept;
        }
        if self.config.dedup.near {
            let cfg = self.config.dedup.near_config(self.seed("near-dedup", 0));
            let o = near_dedup(docs, &cfg).map_err(stage_err(key))?;
            near = o.dropped.len();
            report.extend(o.dropped);
            docs = o.kept;
        }
        report.sort_by(|a, b| a.dropped_id.cmp(&b.dropped_id));
        let dir = self.begin(key)?;
        write_shard(&dir.path().join("corpus.jsonl"), &docs).map_err(stage_err(key))?;
        write_jsonl(&dir.path().join("report.jsonl"), &report).map_err(stage_err(key))?;
        let details = json!({"input": before, "exact_dropped": exact, "near_dropped": near});
        self.finish(key, dir, docs.len() as u64, tokens_of(&docs), details, t, None)
    }

    pub(crate) fn benchmark_index(&self, key: &str) -> CliResult<Option<NgramIndex>> {
        let Some(path) = &self.config.decontam.benchmarks else {
            return Ok(None);
        };
        let benches = load_benchmarks(path).map_err(stage_err(key))?;
        let index = build_ngram_index(&benches, &self.config.decontam.index_config()).map_err(stage_err(key))?;
        Ok(Some(index))
    }

    fn decontam(&self) -> CliResult<StageSummary> {
        let key = "decontam";
        let t = Instant::now();
        let docs = self.read_corpus(key, &self.require(key, "dedup/corpus.jsonl", "dedup")?)?;
        let (kept, removed) = match self.benchmark_index(key)? {
            Some(index) => {
                let o = decontaminate(docs, &index, self.config.decontam.min_hits);
                (o.kept, o.removed)
            }
            None => {
                log::warn!("decontam.benchmarks not set; passing the corpus through unchanged");
                (docs, Vec::new())
            }
        };
        let dir = self.begin(key)?;
        write_shard(&dir.path().join("corpus.jsonl"), &kept).map_err(stage_err(key))?;
        write_jsonl(&dir.path().join("removed.jsonl"), &removed).map_err(stage_err(key))?;
        let details = json!({"removed": removed.len()});
        self.finish(key, dir, kept.len() as u64, tokens_of(&kept), details, t, None)
    }

    /// Named recipe assembled from the annotator block's data paths, with
    /// the decontaminated corpus as the random-negative pool.
    pub(crate) fn named_recipe(&self, name: &RecipeName, stage: &str) -> CliResult<TrainingRecipe> {
        let corpus = self.require(stage, "decontam/corpus.jsonl", "decontam")?;
        let a = &self.config.annotator;
        let need = |p: &Option<PathBuf>, field: &str| {
            p.clone()
                .ok_or_else(|| CliError::Config(format!("recipe {name} needs annotator.{field}")))
        };
        Ok(match name {
            RecipeName::AnnEdu => TrainingRecipe::ann_edu(&corpus, &need(&a.edu_labels, "edu_labels")?),
            RecipeName::AnnIns => TrainingRecipe::ann_ins(
                &corpus,
                &need(&a.edu_labels, "edu_labels")?,
                &need(&a.instruct, "instruct")?,
                &corpus,
            ),
            RecipeName::AnnHq => TrainingRecipe::ann_hq(&need(&a.hq_files, "hq_files")?, &corpus),
            RecipeName::AnnBest => {
                TrainingRecipe::ann_best(&need(&a.hq_files, "hq_files")?, &need(&a.instruct, "instruct")?, &corpus)
            }
            RecipeName::Custom(n) => return Err(CliError::Config(format!("unknown annotator recipe {n:?}"))),
        })
    }

    fn configured_recipe(&self, stage: &str) -> CliResult<TrainingRecipe> {
        match &self.config.annotator.recipe_file {
            None => self.named_recipe(&RecipeName::parse(&self.config.annotator.recipe), stage),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                let mut recipe: TrainingRecipe = if path.extension().is_some_and(|e| e == "toml") {
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                } else {
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                };
                let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
                map_recipe_paths(&mut recipe, |p| {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                });
                Ok(recipe)
            }
        }
    }

    /// The recipe with its paths shown relative to the work directory where
    /// possible, so that recorded provenance does not depend on where the
    /// run lives.
    fn portable_recipe(&self, recipe: &TrainingRecipe) -> TrainingRecipe {
        let mut r = recipe.clone();
        let wd = self.work_dir().to_path_buf();
        map_recipe_paths(&mut r, |p| {
            if let Ok(rel) = p.strip_prefix(&wd) {
                *p = rel.to_path_buf();
            }
        });
        r
    }

    fn train_default(&self) -> CliResult<StageSummary> {
        let recipe = self.configured_recipe("train-annotator")?;
        self.train_into("annotator", recipe)
    }

    pub(crate) fn train_into(&self, key: &str, recipe: TrainingRecipe) -> CliResult<StageSummary> {
        let t = Instant::now();
        let a = &self.config.annotator;
        let recipe = if a.scale == 1.0 { recipe } else { recipe.scaled(a.scale) };
        let set = recipe
            .resolve(self.seed("annotator", 0), &self.languages)
            .map_err(stage_err(key))?;
        let mut model = train_annotator(&set, recipe.name.clone(), &a.features, &a.chunk, &a.hyper)
            .map_err(stage_err(key))?;
        let portable = self.portable_recipe(&recipe);
        model.provenance.recipe_hash = portable.content_hash();
        let dir = self.begin(key)?;
        model.save(&dir.path().join("model.bin")).map_err(stage_err(key))?;
        let ids = set.ids();
        write_json(&dir.path().join("training_ids.json"), &sorted_ids(&ids)).map_err(stage_err(key))?;
        write_json(&dir.path().join("recipe.json"), &portable).map_err(stage_err(key))?;
        let (pos, neg) = set.class_counts();
        let details = json!({
            "recipe": recipe.name.as_str(),
            "positives": pos,
            "negatives": neg,
            "final_loss": model.loss_trace.last(),
        });
        self.finish(key, dir, set.examples.len() as u64, 0, details, t, None)
    }

    fn score(&self) -> CliResult<StageSummary> {
        let key = "score";
        let t = Instant::now();
        let model_path = self.require(key, "annotator/model.bin", "train-annotator")?;
        let docs = self.read_corpus(key, &self.require(key, "decontam/corpus.jsonl", "decontam")?)?;
        let model = AnnotatorModel::load(&model_path).map_err(stage_err(key))?;
        let records = score_corpus(&model, &docs, self.config.workers).map_err(stage_err(key))?;
        let dir = self.begin(key)?;
        write_jsonl(&dir.path().join("scores.jsonl"), &records).map_err(stage_err(key))?;
        let mean = if records.is_empty() {
            None
        } else {
            Some(records.iter().map(|r| r.score).sum::<f64>() / records.len() as f64)
        };
        self.finish(key, dir, records.len() as u64, tokens_of(&docs), json!({"mean_score": mean}), t, None)
    }

    /// Quotas from the records' own token mix (optionally with Python
    /// reweighted), then top-percentile selection.
    pub(crate) fn plan_selection(
        &self,
        key: &str,
        records: &[ScoreRecord],
        horizon: u64,
        k: i64,
        python_target: Option<f64>,
    ) -> CliResult<SelectionManifest> {
        let plan = plan_repetitions(horizon, k).map_err(stage_err(key))?;
        let mut mass: BTreeMap<_, u64> = BTreeMap::new();
        for r in records {
            *mass.entry(r.language.clone()).or_default() += r.token_count as u64;
        }
        if mass.values().sum::<u64>() == 0 {
            log::warn!("{key}: no scored tokens; the selection is empty");
            return Ok(SelectionManifest::new(plan, None, None, Selection::default()));
        }
        let measured = MixRatio::from_token_mass(&mass).map_err(stage_err(key))?;
        let (mix, reweighting) = match python_target {
            None => (measured, None),
            Some(target) => match reweight_python(&measured, target) {
                Ok(m) => (
                    m,
                    Some(PythonReweighting {
                        target_share: target,
                        applied_at: ReweightScope::SeedSelection,
                    }),
                ),
                Err(e) => {
                    log::warn!("{key}: Python reweighting skipped: {e}");
                    (measured, None)
                }
            },
        };
        let plan = plan.with_mix(&mix).map_err(stage_err(key))?;
        let selection = if python_target.is_some() {
            select_seeds(records, &plan).map_err(stage_err(key))?
        } else {
            select_top_percentile(records, &plan.quotas).map_err(stage_err(key))?
        };
        for (lang, fill) in &selection.fills {
            if fill.shortfall {
                log::warn!(
                    "{key}: {lang} quota {} exceeds the {} available tokens",
                    fill.quota,
                    fill.available_tokens
                );
            }
        }
        Ok(SelectionManifest::new(plan, Some(mix), reweighting, selection))
    }

    pub(crate) fn read_scores(&self, key: &str) -> CliResult<Vec<ScoreRecord>> {
        read_jsonl(&self.require(key, "score/scores.jsonl", "score")?).map_err(stage_err(key))
    }

    /// Write `selection.json` and the selected documents into `dir`.
    pub(crate) fn write_selection(
        &self,
        key: &str,
        dir: &Path,
        manifest: &SelectionManifest,
        docs: &[CodeDocument],
    ) -> CliResult<Vec<CodeDocument>> {
        let chosen: HashSet<&str> = manifest.selected.iter().map(String::as_str).collect();
        let selected: Vec<CodeDocument> = docs.iter().filter(|d| chosen.contains(d.id.as_str())).cloned().collect();
        std::fs::create_dir_all(dir).map_err(stage_err(key))?;
        manifest.write(&dir.join("selection.json")).map_err(stage_err(key))?;
        write_shard(&dir.join("corpus.jsonl"), &selected).map_err(stage_err(key))?;
        Ok(selected)
    }

    fn select(&self) -> CliResult<StageSummary> {
        let key = "select";
        let t = Instant::now();
        let records = self.read_scores(key)?;
        let docs = self.read_corpus(key, &self.require(key, "decontam/corpus.jsonl", "decontam")?)?;
        let s = &self.config.selection;
        let manifest = self.plan_selection(key, &records, s.horizon_tokens, s.repetitions, None)?;
        let dir = self.begin(key)?;
        let selected = self.write_selection(key, dir.path(), &manifest, &docs)?;
        let details = json!({
            "repetitions": manifest.plan.repetition,
            "unique_budget": manifest.plan.unique_budget,
            "quotas": manifest.plan.quotas,
        });
        self.finish(key, dir, selected.len() as u64, manifest.selected_tokens, details, t, None)
    }

    fn group(&self, phase: Phase) -> CliResult<StageSummary> {
        let (rel, run_first) = phase.corpus();
        let key = format!("group/phase{}", phase.number());
        let input = self.require(&key, rel, run_first)?;
        self.group_into(&key, &input, self.config.grouping.strategy, self.seed("group", phase.number() as u64))
    }

    pub(crate) fn group_into(
        &self,
        key: &str,
        input: &Path,
        strategy: GroupingStrategy,
        seed: u64,
    ) -> CliResult<StageSummary> {
        let t = Instant::now();
        let docs = self.read_corpus(key, input)?;
        let tokens = tokens_of(&docs);
        let files = docs.len();
        let grouped = group_documents(docs, strategy, seed);
        let mixed = grouped
            .iter()
            .filter(|d| d.language_scope == LanguageScope::Mixed)
            .count();
        let dir = self.begin(key)?;
        write_jsonl(&dir.path().join("documents.jsonl"), &grouped).map_err(stage_err(key))?;
        let details = json!({"strategy": strategy, "files": files, "mixed_language_documents": mixed});
        self.finish(key, dir, grouped.len() as u64, tokens, details, t, None)
    }

    fn pack(&self, phase: Phase) -> CliResult<StageSummary> {
        let n = phase.number();
        let key = format!("pack/phase{n}");
        let input = self.require(&key, &format!("group/phase{n}/documents.jsonl"), &format!("group --phase {n}"))?;
        let reps = if phase == Phase::Two { self.config.selection.repetitions as u32 } else { 1 };
        self.pack_into(&key, &input, reps, self.seed("pack", n as u64))
    }

    pub(crate) fn pack_into(&self, key: &str, input: &Path, repetitions: u32, seed: u64) -> CliResult<StageSummary> {
        let t = Instant::now();
        let docs: Vec<TrainingDocument> = read_jsonl(input).map_err(stage_err(key))?;
        let g = &self.config.grouping;
        let cfg = g.pack_config();
        let dir = self.begin(key)?;
        let mut sequences = Vec::new();
        let mut pad = 0u64;
        for i in 0..repetitions {
            let sub = dir.path().join(format!("repetition-{i}"));
            std::fs::create_dir_all(&sub).map_err(stage_err(key))?;
            let shards = pack_sharded(&docs, &cfg, &self.tokenizer, repetition_seed(seed, i));
            let mut n = 0;
            for (j, seqs) in shards.iter().enumerate() {
                let stem = format!("shard-{j:05}");
                write_packed_shard(&sub, &stem, seqs).map_err(stage_err(key))?;
                if g.debug_text {
                    write_debug_text(&sub.join(format!("{stem}.txt")), seqs, &cfg.markers).map_err(stage_err(key))?;
                }
                n += seqs.len();
                pad += seqs.iter().map(|s| s.pad_count as u64).sum::<u64>();
            }
            sequences.push(n);
        }
        let total_seqs: usize = sequences.iter().sum();
        let info = json!({
            "seq_len": cfg.seq_len,
            "num_shards": cfg.num_shards,
            "markers": cfg.markers,
            "repetitions": repetitions,
            "sequences_per_repetition": sequences,
            "pad_tokens": pad,
        });
        write_json(&dir.path().join("pack.json"), &info).map_err(stage_err(key))?;
        let tokens = (total_seqs * cfg.seq_len) as u64 - pad;
        self.finish(key, dir, docs.len() as u64, tokens, info, t, None)
    }

    fn iterations(&self, tokens: u64) -> usize {
        iterations_for_tokens(tokens, self.config.schedules.seq_len, self.config.schedules.batch_size)
    }

    /// The learning-rate phase configured for a pretraining phase.
    pub fn schedule_phase(&self, phase: Phase) -> SchedulePhase {
        let s = &self.config.schedules;
        match phase {
            Phase::One => SchedulePhase::pretraining(self.iterations(s.phase1_tokens)),
            Phase::Two => SchedulePhase::rewarmup(self.iterations(self.config.phase2_tokens())),
            Phase::Three => SchedulePhase::rewarmup(self.iterations(s.phase3_tokens)),
        }
    }

    fn schedule(&self, phase: Phase) -> CliResult<StageSummary> {
        let key = format!("schedule/phase{}", phase.number());
        self.schedules_into(&key, &[("lr", self.schedule_phase(phase))])
    }

    pub(crate) fn schedules_into(&self, key: &str, phases: &[(&str, SchedulePhase)]) -> CliResult<StageSummary> {
        let t = Instant::now();
        let dir = self.begin(key)?;
        let mut details = serde_json::Map::new();
        for (name, p) in phases {
            let rows = p.emit_schedule(self.config.schedules.stride).map_err(stage_err(key))?;
            write_schedule(&dir.path().join(format!("{name}.tsv")), &rows).map_err(stage_err(key))?;
            write_json(&dir.path().join(format!("{name}.json")), p).map_err(stage_err(key))?;
            details.insert(name.to_string(), json!({"total_iters": p.total_iters, "rows": rows.len()}));
        }
        self.finish(key, dir, 0, 0, Value::Object(details), t, None)
    }

    fn eval_default(&self) -> CliResult<StageSummary> {
        let key = "eval";
        let model = self.require(key, "annotator/model.bin", "train-annotator")?;
        let ids = self.require(key, "annotator/training_ids.json", "train-annotator")?;
        self.eval_into(key, &model, &ids)
    }

    pub(crate) fn eval_into(&self, key: &str, model_path: &Path, ids_path: &Path) -> CliResult<StageSummary> {
        let t = Instant::now();
        let bench_path = self
            .config
            .benchmarks_for_eval()
            .ok_or_else(|| CliError::Config("eval-annotator needs eval.benchmarks or decontam.benchmarks".into()))?;
        let benches = load_benchmarks(bench_path).map_err(stage_err(key))?;
        let model = AnnotatorModel::load(model_path).map_err(stage_err(key))?;
        let training: HashSet<String> = read_json::<Vec<String>>(ids_path)
            .map_err(stage_err(key))?
            .into_iter()
            .collect();
        let corpus = self.read_corpus(key, &self.require(key, "decontam/corpus.jsonl", "decontam")?)?;
        let heldout: Vec<CodeDocument> = corpus.into_iter().filter(|d| !training.contains(&d.id)).collect();
        let mut n = self.config.eval.n_negatives;
        if heldout.len() < n {
            log::warn!("{key}: only {} held-out documents; using all of them as negatives", heldout.len());
            n = heldout.len();
        }
        if n == 0 {
            return Err(CliError::stage(key, anyhow::anyhow!("no held-out documents for negatives")));
        }
        let mut auc = BTreeMap::new();
        let mut sets = BTreeMap::new();
        for b in &benches {
            let vs = build_validation_set(b, &heldout, &training, n, self.seed("eval", 0)).map_err(stage_err(key))?;
            let scored = vs.score_with(|text| model.score_text(text));
            auc.insert(b.name.clone(), roc_auc(&scored).map_err(stage_err(key))?);
            let ids = |s: &[Sample]| s.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
            sets.insert(b.name.clone(), json!({"positives": ids(&vs.positives), "negatives": ids(&vs.negatives)}));
        }
        let dir = self.begin(key)?;
        write_json(&dir.path().join("auc.json"), &auc).map_err(stage_err(key))?;
        write_json(&dir.path().join("validation_sets.json"), &sets).map_err(stage_err(key))?;
        let mut details = json!({"auc": auc});
        if let Some(p) = &self.config.eval.pass_rates {
            let pass = load_pass_rates(p).map_err(stage_err(key))?;
            match correlation_report(&auc, &pass, self.config.eval.correlation) {
                Ok(report) => {
                    report
                        .write(&dir.path().join("report.json"), &dir.path().join("report.tsv"))
                        .map_err(stage_err(key))?;
                    details["correlation"] = json!(report.correlation);
                }
                Err(e @ (EvalError::ConstantInput | EvalError::TooFewPairs(_))) => {
                    log::warn!("{key}: no correlation report: {e}");
                    details["correlation"] = Value::Null;
                }
                Err(e) => return Err(CliError::stage(key, e)),
            }
        }
        self.finish(key, dir, benches.len() as u64, 0, details, t, None)
    }

    fn template(&self) -> CliResult<PromptTemplate> {
        let y = &self.config.synthetic;
        match &y.template_file {
            Some(p) => PromptTemplate::from_file(&y.template, p),
            None => PromptTemplate::builtin(&y.template),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }

    fn emit_seeds(&self) -> CliResult<StageSummary> {
        let key = "seeds";
        let t = Instant::now();
        let template = self.template()?;
        let records = self.read_scores(key)?;
        let phase2 = self.read_corpus(key, &self.require(key, "select/corpus.jsonl", "select")?)?;
        let ids: HashSet<&str> = phase2.iter().map(|d| d.id.as_str()).collect();
        let eligible: Vec<ScoreRecord> = records.into_iter().filter(|r| ids.contains(r.doc_id.as_str())).collect();
        let y = &self.config.synthetic;
        let manifest = self.plan_selection(key, &eligible, y.seed_budget_tokens, 1, Some(y.python_share))?;
        let chosen: HashSet<&str> = manifest.selected.iter().map(String::as_str).collect();
        let seeds: Vec<CodeDocument> = phase2.iter().filter(|d| chosen.contains(d.id.as_str())).cloned().collect();
        let requests = emit_generation_requests(&seeds, &template, y.max_seed_chars);
        let dir = self.begin(key)?;
        manifest.write(&dir.path().join("seeds.json")).map_err(stage_err(key))?;
        write_jsonl(&dir.path().join("requests.jsonl"), &requests).map_err(stage_err(key))?;
        let details = json!({"requests": requests.len(), "python_reweighting": manifest.python_reweighting});
        self.finish(key, dir, seeds.len() as u64, tokens_of(&seeds), details, t, None)
    }

    fn client(&self) -> CliResult<Box<dyn GenerationClient>> {
        let y = &self.config.synthetic;
        Ok(match y.client {
            ClientKind::Mock => Box::new(MockClient::new(y.mock.clone())),
            ClientKind::Http => {
                Box::new(HttpClient::new(y.http.clone()).map_err(|e| CliError::Config(e.to_string()))?)
            }
        })
    }

    fn collect_synth(&self) -> CliResult<StageSummary> {
        let key = "synth";
        let t = Instant::now();
        let requests: Vec<GenerationRequest> =
            read_jsonl(&self.require(key, "seeds/requests.jsonl", "emit-seeds")?).map_err(stage_err(key))?;
        let client = self.client()?;
        let index = self.benchmark_index(key)?;
        let (responses, logs) =
            collect_responses(&requests, client.as_ref(), &self.config.synthetic.collect, index.as_ref());
        let log_path = self.work_dir().join("logs").join("collect-synth.jsonl");
        write_jsonl(&log_path, &logs).map_err(stage_err(key))?;
        let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
        for r in &responses {
            if let Some(reason) = &r.reject_reason {
                let head = reason.split(':').next().unwrap_or(reason).to_string();
                *reasons.entry(head).or_default() += 1;
            }
        }
        let accepted = responses.iter().filter(|r| r.accepted).count();
        let dir = self.begin(key)?;
        write_jsonl(&dir.path().join("responses.jsonl"), &responses).map_err(stage_err(key))?;
        let details = json!({"requests": requests.len(), "accepted": accepted, "rejected": reasons});
        self.finish(key, dir, accepted as u64, 0, details, t, None)
    }

    fn assemble(&self) -> CliResult<StageSummary> {
        let key = "assemble";
        let t = Instant::now();
        let responses: Vec<GenerationResponse> =
            read_jsonl(&self.require(key, "synth/responses.jsonl", "collect-synth")?).map_err(stage_err(key))?;
        let passthrough = self.read_corpus(key, &self.require(key, "select/corpus.jsonl", "select")?)?;
        let y = &self.config.synthetic;
        let corpus = assemble_phase3_corpus(&responses, passthrough, &y.template, y.target_share, &self.tokenizer);
        let dir = self.begin(key)?;
        corpus.write(dir.path()).map_err(stage_err(key))?;
        let details = json!({
            "synthetic": corpus.manifest.synthetic_count,
            "passthrough": corpus.manifest.passthrough_count,
            "synthetic_share": corpus.manifest.blend.synthetic_share,
        });
        let tokens = tokens_of(&corpus.documents);
        self.finish(key, dir, corpus.documents.len() as u64, tokens, details, t, None)
    }
}

fn map_recipe_paths(recipe: &mut TrainingRecipe, mut f: impl FnMut(&mut PathBuf)) {
    for src in recipe.positives.iter_mut().chain(recipe.negatives.iter_mut()) {
        match &mut src.kind {
            SourceKind::Texts { path } | SourceKind::Corpus { path } => f(path),
            SourceKind::ScoredCorpus { path, labels, .. } | SourceKind::Labeled { path, labels } => {
                f(path);
                f(labels);
            }
        }
    }
}
