#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub const BENCHMARKS: [&str; 3] = ["bench_a", "bench_b", "bench_c"];

const LANGS: [&str; 4] = ["Python", "Go", "Rust", "Java"];
const WORDS: [&str; 24] = [
    "alpha", "beta", "count", "delta", "entry", "frame", "graph", "hash", "index", "jump", "key", "limit", "merge",
    "node", "offset", "parse", "queue", "record", "sort", "token", "update", "value", "window", "yield",
];

fn ident(rng: &mut ChaCha8Rng) -> String {
    let a = WORDS.choose(rng).unwrap();
    let b = WORDS.choose(rng).unwrap();
    format!("{a}_{b}_{}", rng.random_range(0..1000))
}

/// Documented, structured code: the style the annotator should prefer.
pub fn quality_code(rng: &mut ChaCha8Rng) -> String {
    let f = ident(rng);
    let x = ident(rng);
    let y = ident(rng);
    format!(
        "def {f}(items, limit):\n    \"\"\"Return the merged {x} values up to limit.\n\n    Args:\n        items: input records.\n        limit: maximum size.\n    \"\"\"\n    result = []\n    for item in sorted(items):\n        if len(result) >= limit:\n            break\n        result.append(item.{y})\n    return result\n"
    )
}

/// Terse, undocumented code.
pub fn plain_code(rng: &mut ChaCha8Rng, lang: &str) -> String {
    let mut s = String::new();
    for _ in 0..rng.random_range(4..10) {
        let a = ident(rng);
        let b = ident(rng);
        let n: u32 = rng.random_range(0..100);
        match lang {
            "Python" => s.push_str(&format!("{a} = {b} + {n}\n")),
            "Go" => s.push_str(&format!("{a} := {b} * {n}\n")),
            "Rust" => s.push_str(&format!("let {a} = {b} - {n};\n")),
            _ => s.push_str(&format!("int {a} = {b} / {n};\n")),
        }
    }
    s
}

fn bench_solution(bench: usize, i: usize) -> String {
    format!(
        "def solve_{bench}_{i}(values):\n    \"\"\"Return the answer for task {i}.\"\"\"\n    total = {i}\n    for v in values:\n        total = total * 31 + v % {}\n    return total\n",
        bench + 7
    )
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Fixture {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

fn write_jsonl(path: &Path, rows: &[serde_json::Value]) {
    let mut s = String::new();
    for r in rows {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

/// A fixture corpus of `n` documents with benchmarks, annotator sources and
/// a config whose work directory is `work`.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let lang = LANGS[i % LANGS.len()];
        let good = rng.random_bool(0.3);
        let content = if i > 0 && i % 97 == 0 {
            // exact duplicate of the previous document under another path
            docs.last().map(|d: &serde_json::Value| d["content"].as_str().unwrap().to_string()).unwrap()
        } else if i % 211 == 5 {
            format!("# helper\n{}", bench_solution(i % 3, 1))
        } else if good && lang == "Python" {
            quality_code(&mut rng)
        } else {
            plain_code(&mut rng, lang)
        };
        let id = format!("doc{i:05}");
        if i % 5 < 3 {
            labels.push(json!({"doc_id": id, "score": if good { 4.5 } else { 1.0 }}));
        }
        docs.push(json!({
            "id": id,
            "repo_name": format!("org/repo{}", i % 37),
            "path": format!("src/f{i}.{}", lang.to_lowercase()),
            "language": lang,
            "content": content,
        }));
    }
    let half = docs.len() / 2;
    write_jsonl(&root.join("shard-0.jsonl"), &docs[..half]);
    write_jsonl(&root.join("shard-1.jsonl"), &docs[half..]);
    fs::write(
        root.join("manifest.json"),
        json!({"shards": ["shard-0.jsonl", "shard-1.jsonl"], "languages": LANGS}).to_string(),
    )
    .unwrap();
    write_jsonl(&root.join("edu_labels.jsonl"), &labels);

    let mut benches = Vec::new();
    for (b, name) in BENCHMARKS.iter().enumerate() {
        for i in 0..20 {
            benches.push(json!({
                "benchmark": name,
                "entry_id": i,
                "prompt": format!("Write a function that returns the answer for task {i}."),
                "solution": bench_solution(b, i),
            }));
        }
    }
    write_jsonl(&root.join("benchmarks.jsonl"), &benches);
    let hq: Vec<_> = (0..80)
        .map(|i| json!({"id": format!("hq{i}"), "text": quality_code(&mut rng)}))
        .collect();
    write_jsonl(&root.join("hq.jsonl"), &hq);
    let instruct: Vec<_> = (0..30)
        .map(|i| json!({"id": format!("ins{i}"), "text": format!("Write a sorted merge.\n{}", quality_code(&mut rng))}))
        .collect();
    write_jsonl(&root.join("instruct.jsonl"), &instruct);
    let pass: Vec<_> = BENCHMARKS
        .iter()
        .zip([20.0, 30.0, 40.0])
        .map(|(b, p)| json!({"benchmark": b, "pass_at_1": p}))
        .collect();
    write_jsonl(&root.join("pass_rates.jsonl"), &pass);

    let config = root.join("config.toml");
    fs::write(
        &config,
        r#"work_dir = "work"
manifest = "manifest.json"
master_seed = 7
workers = 2

[decontam]
benchmarks = "benchmarks.jsonl"

[annotator]
recipe = "Ann-BEST"
hq_files = "hq.jsonl"
instruct = "instruct.jsonl"
edu_labels = "edu_labels.jsonl"
scale = 0.001

[selection]
horizon_tokens = 80000

[schedules]
phase2_tokens = 50000000000

[eval]
n_negatives = 200
pass_rates = "pass_rates.jsonl"

[synthetic]
seed_budget_tokens = 3000
"#,
    )
    .unwrap();
    Fixture { dir, config }
}

/// The fixture's config with its work directory moved to `work`.
pub fn config_with_work_dir(f: &Fixture, work: &Path) -> codecurate::PipelineConfig {
    codecurate::PipelineConfig::load(&f.config, &[format!("work_dir={:?}", work.display().to_string())]).unwrap()
}
