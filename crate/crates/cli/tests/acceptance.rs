//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use codecurate::manifest::list_files;
use codecurate::recipes::{repetition_label, run_recipe, Recipe};
use codecurate::Pipeline;
use codecurate_core::annotator::{
    train_annotator, AnnotatorMode, AnnotatorModel, ChunkPolicy, FeatureSpec, Hyperparameters, LabeledExample,
    RecipeName, TrainingSet,
};
use codecurate_core::corpus::{CodeDocument, LanguageTag, ScoreRecord, Tokenizer};
use codecurate_core::decontam::{build_ngram_index, decontaminate, BenchmarkCorpus, BenchmarkEntry, DecontamConfig};
use codecurate_core::dedupe::{jaccard_exact, near_dedup, MinHasher, NearDedupConfig, ShingleSet};
use codecurate_core::eval::{build_validation_set, correlation_report, roc_auc, Correlation};
use codecurate_core::packing::{group_documents, pack_sequences, GroupingStrategy, LanguageScope, Markers};
use codecurate_core::schedule::{SchedulePhase, MAX_LR, MIN_LR};
use codecurate_core::selection::{plan_repetitions, reweight_python, select_top_percentile, MixRatio};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(got: f64, want: f64, tol: f64) -> bool {
    if want == 0.0 {
        got == 0.0
    } else {
        ((got - want) / want).abs() <= tol
    }
}

fn doc(id: String, lang: &str, repo: &str, content: String) -> CodeDocument {
    CodeDocument::new(Some(id), repo, "p", LanguageTag::new(lang), content, &Tokenizer::approximate())
}

fn schedule_constants() -> Outcome {
    let total = 119_209;
    let cos = SchedulePhase::pretraining(total);
    let checks = [
        ("cosine lr(0)", cos.lr_at(0), 0.0),
        ("cosine lr(600)", cos.lr_at(600), 5.3e-4),
        ("cosine lr(total)", cos.lr_at(total), 5.3e-5),
    ];
    let rw = SchedulePhase::rewarmup(12_207);
    let rw_checks = [("rewarmup lr(1000)", rw.lr_at(1000), 5.3e-4), ("rewarmup lr(total)", rw.lr_at(12_207), 0.0)];
    for (name, got, want) in checks.into_iter().chain(rw_checks) {
        let got = got.map_err(|e| format!("{name}: {e}"))?;
        ensure(rel_close(got, want, 1e-12), || format!("{name} = {got:e}, want {want:e}"))?;
    }
    ensure(MAX_LR == 5.3e-4 && MIN_LR == 5.3e-5 && cos.warmup_iters == 600 && rw.warmup_iters == 1000, || {
        "schedule constants differ".into()
    })?;
    Ok("5 endpoints within relative 1e-12".into())
}

fn repetition_planning() -> Outcome {
    let want = ["1x50.0B", "2x25.0B", "3x16.7B", "4x12.5B", "5x10.0B"];
    let mut rows = Vec::new();
    for k in 1..=5i64 {
        let p = plan_repetitions(50_000_000_000, k).map_err(|e| e.to_string())?;
        ensure(p.unique_budget == 50_000_000_000 / k as u64, || format!("k={k}: unique {}", p.unique_budget))?;
        ensure(p.unique_budget * k as u64 + p.remainder == 50_000_000_000, || format!("k={k}: remainder"))?;
        rows.push(repetition_label(p.repetition, p.unique_budget));
    }
    ensure(rows == want, || format!("rows {rows:?}"))?;
    Ok(rows.join(", "))
}

fn brute_auc(scored: &[(f64, bool)]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u64, 0u64);
    for &(p, _) in scored.iter().filter(|s| s.1) {
        for &(n, _) in scored.iter().filter(|s| !s.1) {
            pairs += 1;
            twice_wins += match p.partial_cmp(&n).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..50);
        let mut scored: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random_range(0..levels) as f64 / levels as f64, rng.random_bool(0.4)))
            .collect();
        scored[0].1 = true;
        scored[1].1 = false;
        let got = roc_auc(&scored).map_err(|e| e.to_string())?;
        let want = brute_auc(&scored);
        ensure(got == want, || format!("case {case}: {got} vs brute force {want}"))?;
    }
    Ok("1000 instances, exact agreement".into())
}

fn marked_code(rng: &mut ChaCha8Rng, marked: bool) -> String {
    let mut lines: Vec<String> = (0..rng.random_range(6..16))
        .map(|_| format!("v{} = w{} + {}", rng.random_range(0..300), rng.random_range(0..300), rng.random_range(0..9)))
        .collect();
    if marked {
        let at = rng.random_range(0..lines.len());
        lines.insert(at, "\"\"\"Args: values. Returns: the checked result.\"\"\"".into());
    }
    lines.join("\n")
}

fn marker_set(seed: u64, n: usize) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    for i in 0..n {
        for (label, tag) in [(1.0, "p"), (0.0, "n")] {
            examples.push(LabeledExample {
                id: format!("{seed}{tag}{i}"),
                text: marked_code(&mut rng, label > 0.5),
                label,
            });
        }
    }
    TrainingSet {
        mode: AnnotatorMode::Classification,
        examples,
    }
}

fn train(set: &TrainingSet, spec: FeatureSpec) -> Result<AnnotatorModel, String> {
    train_annotator(set, RecipeName::AnnHq, &spec, &ChunkPolicy::default(), &Hyperparameters::default())
        .map_err(|e| e.to_string())
}

fn annotator_efficacy() -> Outcome {
    let model = train(&marker_set(1, 400), FeatureSpec::default())?;
    let heldout = marker_set(2, 400);
    let scored: Vec<(f64, bool)> = heldout.examples.iter().map(|e| (model.score_text(&e.text), e.label > 0.5)).collect();
    let auc = roc_auc(&scored).map_err(|e| e.to_string())?;
    ensure(auc >= 0.95, || format!("held-out ROC-AUC {auc}"))?;
    Ok(format!("held-out ROC-AUC {auc:.4}"))
}

fn chunk_consistency() -> Outcome {
    let model = train(&marker_set(5, 100), FeatureSpec::default())?;
    let c = model.chunk_policy.chunk_chars;
    let alphabet: Vec<char> = "abc xyz_\n(){}=+0123éλ→".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let long = i < 100;
        let n = if long { rng.random_range(c + 1..4 * c) } else { rng.random_range(0..=c) };
        let chars: Vec<char> = (0..n).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
        let text: String = chars.iter().collect();
        let d = doc(format!("c{i}"), "Python", "r", text.clone());
        let got = model.score_document(&d);
        if long {
            let slice = |s: usize| chars[s..s + c].iter().collect::<String>();
            let mid = (n - c) / 2;
            let want = (model.score_chunk(&slice(0)) + model.score_chunk(&slice(mid)) + model.score_chunk(&slice(n - c))) / 3.0;
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-12, || format!("doc {i} ({n} chars): {got} vs {want}"))?;
        } else {
            ensure(got == model.score_chunk(&text), || format!("short doc {i} differs from its single chunk"))?;
        }
    }
    Ok(format!("100 long docs max error {worst:e}; 100 short docs exact"))
}

fn near_fixture(rng: &mut ChaCha8Rng, total: usize) -> Vec<CodeDocument> {
    let mut out = Vec::new();
    let mut b = 0;
    while out.len() < total {
        let base: Vec<char> = (0..400).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect();
        out.push(doc(format!("b{b:03}"), "Python", "r", base.iter().collect()));
        for v in 0..rng.random_range(0..4) {
            let mut chars = base.clone();
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..chars.len());
                chars[i] = '#';
            }
            out.push(doc(format!("b{b:03}v{v}"), "Python", "r", chars.into_iter().collect()));
        }
        b += 1;
    }
    out.truncate(total);
    out
}

/// All-pairs exact Jaccard, union-find, smallest id per component.
fn brute_keepers(sets: &[ShingleSet], threshold: f64) -> BTreeSet<String> {
    let mut parent: Vec<usize> = (0..sets.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if jaccard_exact(&sets[i], &sets[j]).value() >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut best: HashMap<usize, &str> = HashMap::new();
    for (i, s) in sets.iter().enumerate() {
        let r = find(&mut parent, i);
        let e = best.entry(r).or_insert(s.doc_id.as_str());
        if s.doc_id.as_str() < *e {
            *e = s.doc_id.as_str();
        }
    }
    best.values().map(|s| s.to_string()).collect()
}

fn near_dedup_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let docs = near_fixture(&mut rng, 200);
    let cfg = NearDedupConfig::default();
    let sets: Vec<ShingleSet> = docs.iter().map(|d| ShingleSet::from_text(d.id.clone(), &d.content, cfg.shingle_size)).collect();
    let want = brute_keepers(&sets, cfg.threshold);
    let out = near_dedup(docs, &cfg).map_err(|e| e.to_string())?;
    let got: BTreeSet<String> = out.kept.iter().map(|d| d.id.clone()).collect();
    ensure(got == want, || {
        format!("kept sets differ: {:?} / {:?}", got.difference(&want).collect::<Vec<_>>(), want.difference(&got).collect::<Vec<_>>())
    })?;

    let hasher = MinHasher::new(128, 99);
    let pool: Vec<u64> = (0..2000).map(|_| rng.random()).collect();
    let pairs = 150;
    let mut err = 0.0;
    for _ in 0..pairs {
        let n = rng.random_range(50..400);
        let shared = rng.random_range(0..=n);
        let a: Vec<u64> = pool[..n].to_vec();
        let b: Vec<u64> = pool[..shared].iter().chain(&pool[1000..1000 + n - shared]).copied().collect();
        let (sa, sb) = (ShingleSet::from_hashes("a", a), ShingleSet::from_hashes("b", b));
        err += (hasher.signature(&sa).agreement(&hasher.signature(&sb)) - jaccard_exact(&sa, &sb).value()).abs();
    }
    let mae = err / pairs as f64;
    ensure(mae <= 0.05, || format!("MinHash MAE {mae}"))?;
    Ok(format!("{} kept of 200, oracle equal; MinHash MAE {mae:.4} over {pairs} pairs", got.len()))
}

fn decontam_recall() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = DecontamConfig::default();
    let word = |rng: &mut ChaCha8Rng, letters: &[u8]| -> String {
        (0..5).map(|_| *letters.choose(rng).unwrap() as char).collect()
    };
    let solutions: Vec<Vec<String>> = (0..10).map(|_| (0..60).map(|_| word(&mut rng, b"abcdefgh")).collect()).collect();
    let bench = BenchmarkCorpus {
        name: "B".into(),
        entries: solutions
            .iter()
            .enumerate()
            .map(|(i, s)| BenchmarkEntry {
                entry_id: i.to_string(),
                prompt: String::new(),
                solution: s.join(" "),
            })
            .collect(),
    };
    let index = build_ngram_index(&[bench], &cfg).map_err(|e| e.to_string())?;
    let filler = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| word(rng, b"qrstuvwxyz")).collect::<Vec<_>>().join(" ");
    let mut planted = Vec::new();
    let mut clean = Vec::new();
    for i in 0..100 {
        let sol = &solutions[i % solutions.len()];
        let take = cfg.ngram + rng.random_range(0..4);
        let start = rng.random_range(0..=sol.len() - take);
        let text = format!("{}\n{}\n{}", filler(&mut rng, 30), sol[start..start + take].join(" "), filler(&mut rng, 30));
        planted.push(doc(format!("x{i}"), "Python", "r", text));
        clean.push(doc(format!("c{i}"), "Python", "r", filler(&mut rng, 80)));
    }
    let hit = decontaminate(planted, &index, cfg.min_hits);
    ensure(hit.kept.is_empty(), || format!("{} planted documents survived", hit.kept.len()))?;
    let miss = decontaminate(clean, &index, cfg.min_hits);
    ensure(miss.removed.is_empty(), || format!("{} clean documents removed", miss.removed.len()))?;
    Ok(format!("100/100 planted removed, 0/100 clean removed (n={})", cfg.ngram))
}

fn selection_oracle(records: &[ScoreRecord], quotas: &BTreeMap<LanguageTag, u64>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (lang, &quota) in quotas {
        let mut mine: Vec<&ScoreRecord> = records.iter().filter(|r| &r.language == lang).collect();
        mine.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.doc_id.cmp(&b.doc_id)));
        let mut sum = 0;
        for r in mine {
            if sum >= quota {
                break;
            }
            sum += r.token_count as u64;
            out.insert(r.doc_id.clone());
        }
    }
    out
}

fn selection_correctness() -> Outcome {
    const LANGS: [&str; 5] = ["Python", "Go", "Java", "Rust", "C"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..300 {
        let records: Vec<ScoreRecord> = (0..rng.random_range(1..200))
            .map(|i| ScoreRecord {
                doc_id: format!("d{i:04}"),
                language: LanguageTag::new(LANGS[rng.random_range(0..LANGS.len())]),
                score: rng.random_range(0..30) as f64 / 30.0,
                token_count: rng.random_range(1..80),
            })
            .collect();
        let quotas: BTreeMap<LanguageTag, u64> =
            LANGS.iter().map(|l| (LanguageTag::new(l), rng.random_range(0..1500))).collect();
        let sel = select_top_percentile(&records, &quotas).map_err(|e| e.to_string())?;
        let got: BTreeSet<String> = sel.selected.iter().cloned().collect();
        ensure(got == selection_oracle(&records, &quotas), || format!("case {case}: differs from oracle"))?;
        for (lang, fill) in &sel.fills {
            let max_doc = records
                .iter()
                .filter(|r| &r.language == lang && got.contains(&r.doc_id))
                .map(|r| r.token_count as u64)
                .max()
                .unwrap_or(0);
            let quota = quotas[lang];
            if fill.shortfall {
                ensure(fill.selected_tokens == fill.available_tokens, || format!("case {case} {lang}: shortfall"))?;
            } else {
                ensure(fill.selected_tokens >= quota, || format!("case {case} {lang}: under quota"))?;
                ensure(quota == 0 || fill.selected_tokens < quota + max_doc, || {
                    format!("case {case} {lang}: overshoot {} over {quota}", fill.selected_tokens)
                })?;
            }
        }
    }

    for case in 0..300 {
        let raw: Vec<f64> = (0..rng.random_range(2..18)).map(|_| rng.random_range(1..1000) as f64).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: BTreeMap<LanguageTag, f64> =
            raw.iter().enumerate().skip(1).map(|(i, w)| (LanguageTag::new(&format!("L{i:02}")), w / total)).collect();
        weights.insert(LanguageTag::python(), raw[0] / total);
        let mix = MixRatio::new(weights.clone()).map_err(|e| e.to_string())?;
        let out = reweight_python(&mix, 0.5).map_err(|e| e.to_string())?;
        ensure((out.get(&LanguageTag::python()) - 0.5).abs() < 1e-12, || format!("case {case}: python share"))?;
        let others: Vec<&LanguageTag> = weights.keys().filter(|l| !l.is_python()).collect();
        for a in &others {
            for b in &others {
                let (before, after) = (mix.get(a) / mix.get(b), out.get(a) / out.get(b));
                ensure((before - after).abs() <= 1e-12 * before.max(1.0), || format!("case {case}: {a}/{b} ratio moved"))?;
            }
        }
    }
    Ok("300 selection fixtures match oracle within one-document slack; 300 reweightings preserve ratios".into())
}

fn grouping_invariants() -> Outcome {
    const LANGS: [&str; 4] = ["Python", "Go", "Rust", "Java"];
    let tok = Tokenizer::approximate();
    let m = Markers::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut total_docs, mut total_seqs) = (0, 0);
    for case in 0..20u64 {
        let files: Vec<CodeDocument> = (0..rng.random_range(1..300))
            .map(|i| {
                let words: Vec<String> = (0..rng.random_range(0..400)).map(|_| format!("t{}", rng.random_range(0..50))).collect();
                doc(format!("f{i:04}"), LANGS[rng.random_range(0..4)], &format!("repo{}", rng.random_range(0..25)), words.join(" "))
            })
            .collect();
        let mut want: Vec<String> = files.iter().map(|f| f.id.clone()).collect();
        want.sort();
        for s in [GroupingStrategy::ByRepo, GroupingStrategy::ByLanguageAndRepo] {
            let docs = group_documents(files.clone(), s, case);
            let mut members: Vec<String> = docs.iter().flat_map(|d| d.member_files.clone()).collect();
            members.sort();
            ensure(members == want, || format!("case {case} {s:?}: file multiset changed"))?;
            if s == GroupingStrategy::ByLanguageAndRepo {
                let mixed = docs.iter().filter(|d| d.language_scope == LanguageScope::Mixed).count();
                ensure(mixed == 0, || format!("case {case}: {mixed} mixed documents"))?;
            }
            let seqs = pack_sequences(&docs, 8192, &m, &tok, case);
            let expect: usize = docs.iter().map(|d| d.encode(&tok, m.file_sep).len() + 1).sum();
            let non_pad: usize = seqs.iter().map(|q| 8192 - q.pad_count).sum();
            ensure(non_pad == expect, || format!("case {case} {s:?}: {non_pad} tokens packed, {expect} expected"))?;
            ensure(seqs.iter().all(|q| q.tokens.len() == 8192), || format!("case {case}: sequence not 8192 long"))?;
            total_docs += docs.len();
            total_seqs += seqs.len();
        }
    }
    Ok(format!("40 groupings ({total_docs} documents, {total_seqs} sequences of 8192)"))
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    list_files(root, root)
        .unwrap()
        .into_iter()
        .filter(|p| !p.starts_with("logs"))
        .map(|p| (p.display().to_string(), std::fs::read(root.join(&p)).unwrap()))
        .collect()
}

fn end_to_end_determinism() -> Outcome {
    let f = common::fixture(1000, 42);
    let mut trees = Vec::new();
    for run in ["run-a", "run-b"] {
        let p = Pipeline::new(common::config_with_work_dir(&f, &f.path().join(run))).map_err(|e| e.to_string())?;
        for r in [Recipe::Phase1, Recipe::Phase2, Recipe::Phase3] {
            run_recipe(&p, r).map_err(|e| format!("{run} {r}: {e}"))?;
        }
        trees.push(tree(p.work_dir()));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.keys().eq(b.keys()), || "runs produced different file sets".into())?;
    let differing: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    ensure(differing.is_empty(), || format!("differing files: {differing:?}"))?;
    for must in ["run_manifest.json", "pack/phase1/repetition-0/shard-00000.bin", "pack/phase3/repetition-0/shard-00000.bin"] {
        ensure(a.contains_key(must), || format!("{must} missing"))?;
    }
    let synth = String::from_utf8_lossy(&a["assemble/manifest.json"]).contains("seed_doc_id");
    ensure(synth, || "phase 3 contains no synthetic documents".into())?;
    Ok(format!("{} files byte-identical across two work directories", a.len()))
}

fn auc_tracks_pass_rate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let heldout: Vec<CodeDocument> = (0..400)
        .map(|i| {
            let lang = ["Python", "Go", "Rust", "Java"][i % 4];
            doc(format!("h{i:04}"), lang, "r", common::plain_code(&mut rng, lang))
        })
        .collect();
    let neg_pool: Vec<String> = (0..300).map(|i| common::plain_code(&mut rng, ["Python", "Go"][i % 2])).collect();
    let training_set = |positives: Vec<String>| TrainingSet {
        mode: AnnotatorMode::Classification,
        examples: positives
            .into_iter()
            .enumerate()
            .map(|(i, t)| LabeledExample { id: format!("p{i}"), text: t, label: 1.0 })
            .chain(neg_pool.iter().enumerate().map(|(i, t)| LabeledExample { id: format!("n{i}"), text: t.clone(), label: 0.0 }))
            .collect(),
    };
    let aligned_pos: Vec<String> = (0..300).map(|_| common::quality_code(&mut rng)).collect();
    let unrelated_pos: Vec<String> = (0..300)
        .map(|i| format!("<div class=\"item-{i}\">\n  <span>{}</span>\n</div>\n", rng.random_range(0..1000)))
        .collect();
    let aligned = train(&training_set(aligned_pos), FeatureSpec::default())?;
    let unrelated = train(&training_set(unrelated_pos), FeatureSpec::default())?;

    // Benchmarks progressively closer to the aligned annotator's positives.
    let mut benches = Vec::new();
    for (b, strength) in [("bench_a", 1usize), ("bench_b", 3), ("bench_c", 6)] {
        let entries = (0..40)
            .map(|i| {
                let q = common::quality_code(&mut rng);
                let doc_lines: Vec<&str> = q.lines().take(strength).collect();
                BenchmarkEntry {
                    entry_id: i.to_string(),
                    prompt: format!("{}\n", doc_lines.join("\n")),
                    solution: common::plain_code(&mut rng, "Python"),
                }
            })
            .collect();
        benches.push(BenchmarkCorpus { name: b.into(), entries });
    }
    let none = HashSet::new();
    let mut auc_aligned = BTreeMap::new();
    for bench in &benches {
        let vs = build_validation_set(bench, &heldout, &none, 400, 5).map_err(|e| e.to_string())?;
        let a = roc_auc(&vs.score_with(|t| aligned.score_text(t))).map_err(|e| e.to_string())?;
        let u = roc_auc(&vs.score_with(|t| unrelated.score_text(t))).map_err(|e| e.to_string())?;
        ensure(a > u, || format!("{}: aligned {a:.4} not above unrelated {u:.4}", bench.name))?;
        auc_aligned.insert(bench.name.clone(), a);
    }
    let pass: BTreeMap<String, f64> =
        [("bench_a", 20.0), ("bench_b", 30.0), ("bench_c", 40.0)].iter().map(|(b, p)| (b.to_string(), *p)).collect();
    let report = correlation_report(&auc_aligned, &pass, Correlation::Spearman).map_err(|e| e.to_string())?;
    ensure(report.correlation > 0.0, || format!("Spearman {} with AUCs {auc_aligned:?}", report.correlation))?;
    let shown: Vec<String> = auc_aligned.iter().map(|(b, a)| format!("{b} {a:.3}")).collect();
    Ok(format!("aligned wins on all 3 benchmarks ({}); Spearman {:.2}", shown.join(", "), report.correlation))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("schedule constants", schedule_constants, Duration::from_secs(1)),
        ("repetition planning", repetition_planning, Duration::from_secs(1)),
        ("ROC-AUC oracle equivalence", auc_oracle, Duration::from_secs(30)),
        ("annotator efficacy on separable data", annotator_efficacy, Duration::from_secs(60)),
        ("chunk-scoring consistency", chunk_consistency, Duration::from_secs(60)),
        ("near-dedup oracle equivalence", near_dedup_oracle, Duration::from_secs(30)),
        ("decontamination recall", decontam_recall, Duration::from_secs(10)),
        ("selection correctness", selection_correctness, Duration::from_secs(60)),
        ("grouping invariants", grouping_invariants, Duration::from_secs(60)),
        ("end-to-end determinism", end_to_end_determinism, Duration::from_secs(300)),
        ("ROC-AUC vs pass rate methodology", auc_tracks_pass_rate, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed();
        let (verdict, detail) = match outcome {
            Ok(d) if elapsed <= *budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {elapsed:.1?}, budget {budget:?}")),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} {:>2}. {name}: {detail} [{elapsed:.2?}]", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
