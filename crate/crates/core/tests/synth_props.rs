use std::collections::{BTreeMap, HashSet};

use codecurate_core::corpus::{ingest_shard, CodeDocument, ErrorPolicy, LanguageSet, LanguageTag, ScoreRecord, Tokenizer};
use codecurate_core::decontam::{build_ngram_index, BenchmarkCorpus, BenchmarkEntry, DecontamConfig};
use codecurate_core::selection::{plan_repetitions, reweight_python, select_top_percentile, MixRatio};
use codecurate_core::synth::{
    assemble_phase3_corpus, collect_responses, emit_generation_requests, select_seeds, token_share, CollectConfig,
    MockClient, MockMode, PromptTemplate, DEFAULT_TEMPLATE, REJECT_EMPTY, REJECT_NEAR_DUPLICATE,
};
use proptest::prelude::*;

fn seed_doc(i: usize, lang: &str, body: &str) -> CodeDocument {
    CodeDocument::new(
        Some(format!("s{i:03}")),
        format!("repo{}", i % 3),
        format!("f{i}"),
        LanguageTag::new(lang),
        body,
        &Tokenizer::approximate(),
    )
}

fn fixture_seeds(n: usize) -> Vec<CodeDocument> {
    (0..n)
        .map(|i| {
            let body = format!(
                "def compute_{i}(values):\n    total = 0\n    for v in values:\n        total += v * {i}\n    return total\n"
            );
            seed_doc(i, if i % 2 == 0 { "Python" } else { "Go" }, &body)
        })
        .collect()
}

fn fast() -> CollectConfig {
    CollectConfig {
        initial_backoff_ms: 0,
        ..Default::default()
    }
}

fn template() -> PromptTemplate {
    PromptTemplate::builtin(DEFAULT_TEMPLATE).unwrap()
}

#[test]
fn echo_mock_accepts_everything_on_clean_fixture() {
    let reqs = emit_generation_requests(&fixture_seeds(12), &template(), 4000);
    assert_eq!(reqs.len(), 12);
    let (resp, logs) = collect_responses(&reqs, &MockClient::new(MockMode::EchoTransform), &fast(), None);
    assert_eq!(logs.len(), 12);
    assert!(resp.iter().all(|r| r.accepted), "{:?}", resp.iter().find(|r| !r.accepted));
}

#[test]
fn empty_and_verbatim_mocks_are_rejected() {
    let reqs = emit_generation_requests(&fixture_seeds(4), &template(), 4000);
    let (empty, _) = collect_responses(&reqs, &MockClient::new(MockMode::Empty), &fast(), None);
    assert!(empty.iter().all(|r| r.reject_reason.as_deref() == Some(REJECT_EMPTY)));
    let (verb, _) = collect_responses(&reqs, &MockClient::new(MockMode::Verbatim), &fast(), None);
    assert!(verb.iter().all(|r| r.reject_reason.as_deref() == Some(REJECT_NEAR_DUPLICATE)));
}

#[test]
fn transport_failures_retry_then_succeed() {
    let reqs = emit_generation_requests(&fixture_seeds(3), &template(), 4000);
    let (resp, _) = collect_responses(&reqs, &MockClient::new(MockMode::FailTransport { failures: 2 }), &fast(), None);
    assert!(resp.iter().all(|r| r.accepted && r.attempts == 3));
    let (resp, _) = collect_responses(&reqs, &MockClient::new(MockMode::FailTransport { failures: 9 }), &fast(), None);
    assert!(resp.iter().all(|r| r.reject_reason.as_deref() == Some("transport") && r.attempts == 4));
}

#[test]
fn long_seed_is_cut_at_a_line() {
    let body: String = (0..400).map(|i| format!("x_{i:05} = {i}\n")).collect();
    assert!(body.len() >= 5000);
    let reqs = emit_generation_requests(&[seed_doc(0, "Python", &body)], &template(), 4000);
    let snip = reqs[0].seed_snippet().unwrap();
    assert!(snip.chars().count() <= 4000);
    assert!(snip.ends_with('\n'));
    assert!(body.starts_with(snip));
}

#[test]
fn contaminated_output_is_rejected_and_accepted_output_is_clean() {
    let seeds = fixture_seeds(6);
    let reqs = emit_generation_requests(&seeds, &template(), 4000);
    let leaked = "def leaked_solution(a, b):\n    return sorted(a + b)[len(a) % 2] * 3 + 17\n";
    let bench = BenchmarkCorpus {
        name: "bench".into(),
        entries: vec![BenchmarkEntry {
            entry_id: "0".into(),
            prompt: String::new(),
            solution: leaked.into(),
        }],
    };
    let idx = build_ngram_index(&[bench], &DecontamConfig::default()).unwrap();
    let fixed = MockClient::new(MockMode::Fixed {
        text: format!("```python\n{leaked}```\n"),
    });
    let (bad, _) = collect_responses(&reqs, &fixed, &fast(), Some(&idx));
    assert!(bad.iter().all(|r| r.reject_reason.as_deref() == Some("contaminated: bench/0")), "{:?}", bad[0]);
    let (good, _) = collect_responses(&reqs, &MockClient::new(MockMode::EchoTransform), &fast(), Some(&idx));
    for r in good.iter().filter(|r| r.accepted) {
        assert!(idx.scan(r.extracted_code.as_ref().unwrap()).is_empty());
    }
}

#[test]
fn assembly_traces_seeds_and_round_trips() {
    let seeds = fixture_seeds(10);
    let reqs = emit_generation_requests(&seeds, &template(), 4000);
    let (resp, _) = collect_responses(&reqs, &MockClient::new(MockMode::EchoTransform), &fast(), None);
    let passthrough: Vec<_> = (0..10).map(|i| seed_doc(100 + i, "Rust", &format!("fn f{i}() {{}}\n"))).collect();
    let tok = Tokenizer::approximate();
    let out = assemble_phase3_corpus(&resp, passthrough.clone(), DEFAULT_TEMPLATE, Some(0.4), &tok);
    assert_eq!(out.documents.len(), 20);
    let ids: HashSet<&str> = out.documents.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids.len(), 20);
    let seed_ids: HashSet<&str> = seeds.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(out.manifest.synthetic.len(), 10);
    for p in &out.manifest.synthetic {
        assert!(seed_ids.contains(p.seed_doc_id.as_str()));
        let d = out.documents.iter().find(|d| d.id == p.doc_id).unwrap();
        assert_eq!(d.repo_name, format!("synthetic/{DEFAULT_TEMPLATE}"));
    }

    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let back = ingest_shard(&dir.path().join("corpus.jsonl"), &LanguageSet::default(), &tok, ErrorPolicy::FailFast).unwrap();
    assert!(back.errors.is_empty());
    assert_eq!(back.documents, out.documents);

    let none = assemble_phase3_corpus(&[], passthrough.clone(), DEFAULT_TEMPLATE, None, &tok);
    let mut want = passthrough;
    want.sort_by(|a, b| a.id.cmp(&b.id));
    assert_eq!(none.documents, want);
}

#[test]
fn mock_pipeline_is_deterministic() {
    let run = || {
        let reqs = emit_generation_requests(&fixture_seeds(16), &template(), 4000);
        let (resp, _) = collect_responses(&reqs, &MockClient::new(MockMode::EchoTransform), &fast(), None);
        let out = assemble_phase3_corpus(&resp, Vec::new(), DEFAULT_TEMPLATE, None, &Tokenizer::approximate());
        serde_json::to_string(&(resp, out.documents, out.manifest)).unwrap()
    };
    assert_eq!(run(), run());
}

fn two_language_records() -> impl Strategy<Value = Vec<ScoreRecord>> {
    prop::collection::vec((any::<bool>(), 0u32..1000, 1usize..40), 20..150).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (py, s, t))| ScoreRecord {
                doc_id: format!("d{i:04}"),
                language: if py { LanguageTag::python() } else { LanguageTag::new("Java") },
                score: s as f64 / 1000.0,
                token_count: t,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn python_seed_share_hits_target(records in two_language_records(), py_raw in 0.05f64..0.95) {
        let mix: BTreeMap<LanguageTag, f64> =
            [(LanguageTag::python(), py_raw), (LanguageTag::new("Java"), 1.0 - py_raw)].into();
        let mix = reweight_python(&MixRatio::new(mix).unwrap(), 0.5).unwrap();
        let avail = |l: &LanguageTag| records.iter().filter(|r| &r.language == l).map(|r| r.token_count as u64).sum::<u64>();
        let budget = 2 * avail(&LanguageTag::python()).min(avail(&LanguageTag::new("Java")));
        prop_assume!(budget >= 2);
        let plan = plan_repetitions(budget, 1).unwrap().with_mix(&mix).unwrap();
        let seeds = select_seeds(&records, &plan).unwrap();
        prop_assert_eq!(&seeds, &select_top_percentile(&records, &plan.quotas).unwrap());
        let share = token_share(&records, &seeds.selected);
        let py = share.get(&LanguageTag::python()).copied().unwrap_or(0.0);
        let total = seeds.selected_tokens() as f64;
        let slack = 40.0 / total;
        prop_assert!(py >= 0.5 - slack && py <= 0.5 + slack, "python share {py}, slack {slack}");
    }
}
