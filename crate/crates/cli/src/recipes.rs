//! Multi-stage recipes: the three pretraining phases and the ablations.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use codecurate_core::annotator::RecipeName;
use codecurate_core::packing::GroupingStrategy;
use codecurate_core::schedule::SchedulePhase;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::stages::{Phase, Pipeline, Stage, StageSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    Phase1,
    Phase2,
    Phase3,
    Table2,
    Table3,
    Table4,
    Table5,
}

impl Recipe {
    pub const ALL: [Recipe; 7] = [
        Recipe::Phase1,
        Recipe::Phase2,
        Recipe::Phase3,
        Recipe::Table2,
        Recipe::Table3,
        Recipe::Table4,
        Recipe::Table5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Phase1 => "phase1",
            Recipe::Phase2 => "phase2",
            Recipe::Phase3 => "phase3",
            Recipe::Table2 => "ablation-table2",
            Recipe::Table3 => "ablation-table3",
            Recipe::Table4 => "ablation-table4",
            Recipe::Table5 => "ablation-table5",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Recipe::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Recipe::ALL.iter().map(|r| r.name()).collect();
            CliError::Usage(format!("unknown recipe {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

const TABLE3_RECIPES: [RecipeName; 4] = [RecipeName::AnnEdu, RecipeName::AnnIns, RecipeName::AnnHq, RecipeName::AnnBest];

fn strategy_name(s: GroupingStrategy) -> &'static str {
    match s {
        GroupingStrategy::ByRepo => "by_repo",
        GroupingStrategy::ByLanguageAndRepo => "by_language_and_repo",
    }
}

/// `4x12.5B` style label for a repetition plan.
pub fn repetition_label(k: u32, unique_budget: u64) -> String {
    format!("{k}x{:.1}B", unique_budget as f64 / 1e9)
}

fn phase_stages(p: &Pipeline, phase: Phase, head: &[Stage]) -> CliResult<Vec<StageSummary>> {
    let mut out = Vec::new();
    for &s in head.iter().chain(&[Stage::Group, Stage::Pack, Stage::Schedule]) {
        out.push(p.run_stage(s, phase)?);
    }
    Ok(out)
}

pub fn run_recipe(p: &Pipeline, recipe: Recipe) -> CliResult<Vec<StageSummary>> {
    log::info!("recipe {recipe}");
    match recipe {
        Recipe::Phase1 => phase_stages(p, Phase::One, &[Stage::Ingest, Stage::Dedup, Stage::Decontam]),
        Recipe::Phase2 => phase_stages(p, Phase::Two, &[Stage::TrainAnnotator, Stage::Score, Stage::Select]),
        Recipe::Phase3 => phase_stages(p, Phase::Three, &[Stage::EmitSeeds, Stage::CollectSynth, Stage::Assemble]),
        Recipe::Table2 => p.in_pool(|| table2(p)),
        Recipe::Table3 => p.in_pool(|| table3(p)),
        Recipe::Table4 => p.in_pool(|| table4(p)).map(|s| vec![s]),
        Recipe::Table5 => p.in_pool(|| table5(p)).map(|s| vec![s]),
    }
}

fn table2(p: &Pipeline) -> CliResult<Vec<StageSummary>> {
    let mut out = Vec::new();
    let input = p.require("ablation-table2", "decontam/corpus.jsonl", "decontam")?;
    for s in [GroupingStrategy::ByRepo, GroupingStrategy::ByLanguageAndRepo] {
        let name = strategy_name(s);
        let group_key = format!("group/table2/{name}");
        out.push(p.group_into(&group_key, &input, s, p.seed("group", 1))?);
        let docs = p.work_dir().join(&group_key).join("documents.jsonl");
        out.push(p.pack_into(&format!("pack/table2/{name}"), &docs, 1, p.seed("pack", 1))?);
    }
    Ok(out)
}

fn table3(p: &Pipeline) -> CliResult<Vec<StageSummary>> {
    let key = "ablation/table3";
    let evaluate = p.config.benchmarks_for_eval().is_some();
    if !evaluate {
        log::warn!("{key}: no benchmarks configured; training the annotators without evaluation");
    }
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for name in &TABLE3_RECIPES {
        let recipe = p.named_recipe(name, key)?;
        let ann_key = format!("annotator/table3/{name}");
        let trained = p.train_into(&ann_key, recipe)?;
        let auc = if evaluate {
            let dir = p.work_dir().join(&ann_key);
            let e = p.eval_into(
                &format!("eval/table3/{name}"),
                &dir.join("model.bin"),
                &dir.join("training_ids.json"),
            )?;
            let auc = e.details["auc"].clone();
            out.push(e);
            auc
        } else {
            json!({})
        };
        rows.push((name.as_str(), trained.details.clone(), auc));
        out.push(trained);
    }

    let t = Instant::now();
    let benches: Vec<String> = rows
        .first()
        .and_then(|r| r.2.as_object())
        .map(|o| o.keys().cloned().collect())
        .unwrap_or_default();
    let mut tsv = String::from("recipe\tpositives\tnegatives");
    for b in &benches {
        let _ = write!(tsv, "\tauc_{b}");
    }
    tsv.push('\n');
    for (name, train, auc) in &rows {
        let _ = write!(tsv, "{name}\t{}\t{}", train["positives"], train["negatives"]);
        for b in &benches {
            let _ = write!(tsv, "\t{}", auc[b].as_f64().map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        tsv.push('\n');
    }
    let dir = p.begin(key)?;
    std::fs::write(dir.path().join("summary.tsv"), tsv).map_err(|e| CliError::stage(key, e))?;
    let details = Value::Array(rows.iter().map(|(n, tr, a)| json!({"recipe": n, "training": tr, "auc": a})).collect());
    out.push(p.finish(key, dir, rows.len() as u64, 0, details, t, None)?);
    Ok(out)
}

/// The three continued-pretraining schedule variants over the phase-2 length.
pub fn table4_phases(p: &Pipeline) -> [(&'static str, SchedulePhase); 3] {
    let n = p.schedule_phase(Phase::Two).total_iters;
    [
        ("linear", SchedulePhase::linear_anneal(n)),
        ("constant", SchedulePhase::constant(n)),
        ("rewarmup", SchedulePhase::rewarmup(n)),
    ]
}

fn table4(p: &Pipeline) -> CliResult<StageSummary> {
    p.schedules_into("schedule/table4", &table4_phases(p))
}

fn table5(p: &Pipeline) -> CliResult<StageSummary> {
    let key = "select/table5";
    let t = Instant::now();
    let records = p.read_scores(key)?;
    let docs = p.read_corpus(key, &p.require(key, "decontam/corpus.jsonl", "decontam")?)?;
    let horizon = p.config.selection.horizon_tokens;
    let dir = p.begin(key)?;
    let mut tsv = String::from("k\tunique_budget\tlabel\tselected_tokens\tselected_documents\n");
    let mut rows = Vec::new();
    for k in 1..=5 {
        let m = p.plan_selection(key, &records, horizon, k, None)?;
        p.write_selection(key, &dir.path().join(format!("k{k}")), &m, &docs)?;
        let label = repetition_label(m.plan.repetition, m.plan.unique_budget);
        let _ = writeln!(
            tsv,
            "{k}\t{}\t{label}\t{}\t{}",
            m.plan.unique_budget,
            m.selected_tokens,
            m.selected.len()
        );
        rows.push(json!({"k": k, "label": label, "unique_budget": m.plan.unique_budget}));
    }
    std::fs::write(dir.path().join("table5.tsv"), tsv).map_err(|e| CliError::stage(key, e))?;
    p.finish(key, dir, 5, 0, Value::Array(rows), t, None)
}
