//! Annotator validation: ROC-AUC on benchmark positives against held-out
//! corpus negatives, and correlation of AUC with downstream pass rates.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CodeDocument;
use crate::decontam::BenchmarkCorpus;
use crate::hashing::{derive_seed, seeded_shuffle_by};
use crate::io::{read_jsonl, write_atomic, write_json, JsonlError};

pub const DEFAULT_NEGATIVES: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("n_negatives must be positive")]
    NoNegativesRequested,
    #[error("only {available} held-out documents for {requested} negatives")]
    InsufficientNegatives { available: usize, requested: usize },
    #[error("held-out document {0} was used to train the annotator")]
    HeldoutOverlap(String),
    #[error("benchmark {0} has no entries")]
    EmptyBenchmark(String),
    #[error("ROC-AUC needs both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score is not finite")]
    NonFinite,
    #[error("correlation needs at least 2 paired benchmarks, got {0}")]
    TooFewPairs(usize),
    #[error("correlation undefined: one side is constant")]
    ConstantInput,
    #[error("pass@1 {value} for {benchmark} outside [0, 100]")]
    PassRateRange { benchmark: String, value: f64 },
    #[error(transparent)]
    Read(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSet {
    pub benchmark: String,
    pub positives: Vec<Sample>,
    pub negatives: Vec<Sample>,
}

/// Positives are the benchmark's problems with their reference solutions
/// (prompt followed by solution); negatives are a seeded sample of held-out
/// documents.
pub fn build_validation_set(
    benchmark: &BenchmarkCorpus,
    heldout: &[CodeDocument],
    training_ids: &HashSet<String>,
    n_negatives: usize,
    seed: u64,
) -> Result<ValidationSet, EvalError> {
    if n_negatives == 0 {
        return Err(EvalError::NoNegativesRequested);
    }
    if benchmark.entries.is_empty() {
        return Err(EvalError::EmptyBenchmark(benchmark.name.clone()));
    }
    if let Some(d) = heldout.iter().find(|d| training_ids.contains(&d.id)) {
        return Err(EvalError::HeldoutOverlap(d.id.clone()));
    }
    if heldout.len() < n_negatives {
        return Err(EvalError::InsufficientNegatives {
            available: heldout.len(),
            requested: n_negatives,
        });
    }
    let mut pool: Vec<&CodeDocument> = heldout.iter().collect();
    seeded_shuffle_by(&mut pool, derive_seed(seed, &benchmark.name, 0), |d| d.id.as_str());
    Ok(ValidationSet {
        benchmark: benchmark.name.clone(),
        positives: benchmark
            .entries
            .iter()
            .map(|e| Sample {
                id: format!("{}/{}", benchmark.name, e.entry_id),
                text: format!("{}{}", e.prompt, e.solution),
            })
            .collect(),
        negatives: pool[..n_negatives]
            .iter()
            .map(|d| Sample {
                id: d.id.clone(),
                text: d.content.clone(),
            })
            .collect(),
    })
}

impl ValidationSet {
    /// `(score, is_positive)` for every sample.
    pub fn score_with<F: Fn(&str) -> f64 + Sync>(&self, score: F) -> Vec<(f64, bool)> {
        use rayon::prelude::*;
        let pos = self.positives.par_iter().map(|s| (score(&s.text), true));
        let neg = self.negatives.par_iter().map(|s| (score(&s.text), false));
        pos.chain(neg).collect()
    }
}

/// 1-based ranks, ties sharing their average rank. Returned doubled so that
/// they stay integral.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j, average (i + 1 + j) / 2
        let r2 = (i + 1 + j) as u64;
        for &k in &order[i..j] {
            ranks[k] = r2;
        }
        i = j;
    }
    ranks
}

/// Mann–Whitney ROC-AUC, ties counted as one half. The pair count is exact
/// (integer); only the final division rounds.
pub fn roc_auc(scored: &[(f64, bool)]) -> Result<f64, EvalError> {
    if scored.iter().any(|s| !s.0.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let p = scored.iter().filter(|s| s.1).count() as u128;
    let n = scored.len() as u128 - p;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClass {
            positives: p as usize,
            negatives: n as usize,
        });
    }
    let values: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let ranks = doubled_ranks(&values);
    let pos_rank_sum2: u128 = scored
        .iter()
        .zip(&ranks)
        .filter(|(s, _)| s.1)
        .map(|(_, &r)| r as u128)
        .sum();
    // 2U = 2 * (rank sum - P(P+1)/2)
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() < 2 {
        return Err(EvalError::TooFewPairs(x.len()));
    }
    pearson_raw(x, y)
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() < 2 {
        return Err(EvalError::TooFewPairs(x.len()));
    }
    let rx: Vec<f64> = doubled_ranks(x).into_iter().map(|r| r as f64).collect();
    let ry: Vec<f64> = doubled_ranks(y).into_iter().map(|r| r as f64).collect();
    pearson_raw(&rx, &ry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    #[default]
    Spearman,
    Pearson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPoint {
    pub benchmark: String,
    pub auc: f64,
    pub pass_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub per_benchmark: BTreeMap<String, f64>,
    pub pass_rates: BTreeMap<String, f64>,
    pub method: Correlation,
    pub correlation: f64,
    pub paired: Vec<PairedPoint>,
}

pub fn correlation_report(
    auc_by_benchmark: &BTreeMap<String, f64>,
    pass_by_benchmark: &BTreeMap<String, f64>,
    method: Correlation,
) -> Result<AucReport, EvalError> {
    for (b, &v) in pass_by_benchmark {
        if !(0.0..=100.0).contains(&v) {
            return Err(EvalError::PassRateRange {
                benchmark: b.clone(),
                value: v,
            });
        }
    }
    let paired: Vec<PairedPoint> = auc_by_benchmark
        .iter()
        .filter_map(|(b, &auc)| {
            pass_by_benchmark.get(b).map(|&p| PairedPoint {
                benchmark: b.clone(),
                auc,
                pass_at_1: p,
            })
        })
        .collect();
    let x: Vec<f64> = paired.iter().map(|p| p.auc).collect();
    let y: Vec<f64> = paired.iter().map(|p| p.pass_at_1).collect();
    let correlation = match method {
        Correlation::Spearman => spearman(&x, &y)?,
        Correlation::Pearson => pearson(&x, &y)?,
    };
    Ok(AucReport {
        per_benchmark: auc_by_benchmark.clone(),
        pass_rates: pass_by_benchmark.clone(),
        method,
        correlation,
        paired,
    })
}

#[derive(Deserialize)]
struct PassRecord {
    benchmark: String,
    pass_at_1: f64,
}

/// Record-per-line `{benchmark, pass_at_1}` with pass@1 in percent.
pub fn load_pass_rates(path: &Path) -> Result<BTreeMap<String, f64>, EvalError> {
    let recs: Vec<PassRecord> = read_jsonl(path)?;
    let mut out = BTreeMap::new();
    for r in recs {
        if !(0.0..=100.0).contains(&r.pass_at_1) {
            return Err(EvalError::PassRateRange {
                benchmark: r.benchmark,
                value: r.pass_at_1,
            });
        }
        out.insert(r.benchmark, r.pass_at_1);
    }
    Ok(out)
}

impl AucReport {
    pub fn table(&self) -> String {
        let mut s = String::from("benchmark\tauc\tpass_at_1\n");
        for p in &self.paired {
            let _ = writeln!(s, "{}\t{:?}\t{:?}", p.benchmark, p.auc, p.pass_at_1);
        }
        s
    }

    pub fn write(&self, json_path: &Path, table_path: &Path) -> std::io::Result<()> {
        write_json(json_path, self)?;
        write_atomic(table_path, self.table().as_bytes())
    }
}
