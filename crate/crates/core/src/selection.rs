//! Token-budgeted selection of high-scoring documents.
//!
//! A [`SelectionPlan`] splits a training horizon into `k` repetitions of a
//! unique budget, a [`MixRatio`] splits the unique budget into per-language
//! quotas, and [`select_top_percentile`] fills each quota with the
//! best-scoring documents of that language.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LanguageTag, ScoreRecord};
use crate::io::write_json;

/// Python share of the phase-3 mix.
pub const PYTHON_TARGET_SHARE: f64 = 0.5;

const MIX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectionError {
    #[error("invalid mix ratio: {0}")]
    InvalidMix(String),
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("Python is not part of the mix")]
    PythonAbsent,
    #[error("target Python share {0} must lie strictly between 0 and 1")]
    InvalidTarget(f64),
    #[error("no language other than Python carries weight")]
    NoOtherMass,
    #[error("no quota for language {0}")]
    MissingQuota(LanguageTag),
    #[error("repetition count must be at least 1, got {0}")]
    InvalidRepetition(i64),
    #[error("record {0} has a non-finite score")]
    NonFiniteScore(String),
    #[error("record id {0} appears more than once")]
    DuplicateRecord(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<LanguageTag, f64>", into = "BTreeMap<LanguageTag, f64>")]
pub struct MixRatio {
    weights: BTreeMap<LanguageTag, f64>,
}

impl TryFrom<BTreeMap<LanguageTag, f64>> for MixRatio {
    type Error = SelectionError;

    fn try_from(weights: BTreeMap<LanguageTag, f64>) -> Result<Self, Self::Error> {
        Self::new(weights)
    }
}

impl From<MixRatio> for BTreeMap<LanguageTag, f64> {
    fn from(m: MixRatio) -> Self {
        m.weights
    }
}

impl MixRatio {
    pub fn new(weights: BTreeMap<LanguageTag, f64>) -> Result<Self, SelectionError> {
        if weights.is_empty() {
            return Err(SelectionError::InvalidMix("no languages".into()));
        }
        if let Some((l, w)) = weights.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(SelectionError::InvalidMix(format!("weight {w} for {l}")));
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > MIX_TOLERANCE {
            return Err(SelectionError::InvalidMix(format!("weights sum to {sum}")));
        }
        Ok(Self { weights })
    }

    /// Mix proportional to measured token mass.
    pub fn from_token_mass(mass: &BTreeMap<LanguageTag, u64>) -> Result<Self, SelectionError> {
        let total: u64 = mass.values().sum();
        if total == 0 {
            return Err(SelectionError::InvalidMix("corpus has no tokens".into()));
        }
        Self::new(
            mass.iter()
                .map(|(l, &m)| (l.clone(), m as f64 / total as f64))
                .collect(),
        )
    }

    pub fn get(&self, lang: &LanguageTag) -> f64 {
        self.weights.get(lang).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LanguageTag, f64)> {
        self.weights.iter().map(|(l, &w)| (l, w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Per-language quotas summing exactly to `unique_budget`.
///
/// Each language gets `floor(w * budget)`; leftover tokens go one at a time
/// to the largest fractional remainders, ties to the lexicographically
/// smaller language name.
pub fn compute_quotas(
    mix: &MixRatio,
    unique_budget: u64,
) -> Result<BTreeMap<LanguageTag, u64>, SelectionError> {
    if unique_budget == 0 {
        return Err(SelectionError::ZeroBudget);
    }
    let mut rows: Vec<(LanguageTag, u64, f64)> = mix
        .iter()
        .map(|(l, w)| {
            let exact = w * unique_budget as f64;
            let floor = exact.floor();
            (l.clone(), floor as u64, exact - floor)
        })
        .collect();
    let assigned: i128 = rows.iter().map(|r| r.1 as i128).sum();
    let mut diff = unique_budget as i128 - assigned;
    // BTreeMap order is name order; a stable sort keeps it for equal remainders.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].2.total_cmp(&rows[a].2));
    while diff > 0 {
        for &i in &order {
            if diff == 0 {
                break;
            }
            rows[i].1 += 1;
            diff -= 1;
        }
    }
    while diff < 0 {
        for &i in order.iter().rev() {
            if diff == 0 {
                break;
            }
            if rows[i].1 > 0 {
                rows[i].1 -= 1;
                diff += 1;
            }
        }
    }
    Ok(rows.into_iter().map(|(l, q, _)| (l, q)).collect())
}

/// Set Python's share to `target` and rescale every other language by the
/// same factor.
pub fn reweight_python(mix: &MixRatio, target: f64) -> Result<MixRatio, SelectionError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(SelectionError::InvalidTarget(target));
    }
    let python = mix
        .weights
        .keys()
        .find(|l| l.is_python())
        .ok_or(SelectionError::PythonAbsent)?;
    let others: f64 = mix
        .weights
        .iter()
        .filter(|(l, _)| !l.is_python())
        .map(|(_, w)| w)
        .sum();
    if others <= 0.0 {
        return Err(SelectionError::NoOtherMass);
    }
    let factor = (1.0 - target) / others;
    let weights = mix
        .weights
        .iter()
        .map(|(l, &w)| (l.clone(), if l == python { target } else { w * factor }))
        .collect();
    MixRatio::new(weights)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageFill {
    pub quota: u64,
    pub selected_tokens: u64,
    pub selected_docs: usize,
    pub available_tokens: u64,
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Selection {
    /// Selected ids, sorted.
    pub selected: Vec<String>,
    pub fills: BTreeMap<LanguageTag, LanguageFill>,
}

impl Selection {
    pub fn selected_tokens(&self) -> u64 {
        self.fills.values().map(|f| f.selected_tokens).sum()
    }
}

fn rank(a: &ScoreRecord, b: &ScoreRecord) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Greedy per-language selection by descending score. The document that
/// crosses a quota is kept, so each language overshoots by less than one
/// document.
pub fn select_top_percentile(
    records: &[ScoreRecord],
    quotas: &BTreeMap<LanguageTag, u64>,
) -> Result<Selection, SelectionError> {
    let mut by_lang: BTreeMap<LanguageTag, Vec<&ScoreRecord>> =
        quotas.keys().map(|l| (l.clone(), Vec::new())).collect();
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !r.score.is_finite() {
            return Err(SelectionError::NonFiniteScore(r.doc_id.clone()));
        }
        if !seen.insert(r.doc_id.as_str()) {
            return Err(SelectionError::DuplicateRecord(r.doc_id.clone()));
        }
        by_lang
            .get_mut(&r.language)
            .ok_or_else(|| SelectionError::MissingQuota(r.language.clone()))?
            .push(r);
    }
    let per_lang: Vec<(LanguageTag, LanguageFill, Vec<String>)> = by_lang
        .into_par_iter()
        .map(|(lang, mut recs)| {
            let quota = quotas[&lang];
            recs.sort_by(|a, b| rank(a, b));
            let available_tokens = recs.iter().map(|r| r.token_count as u64).sum();
            let mut taken = 0u64;
            let mut ids = Vec::new();
            for r in recs {
                if taken >= quota {
                    break;
                }
                taken += r.token_count as u64;
                ids.push(r.doc_id.clone());
            }
            let fill = LanguageFill {
                quota,
                selected_tokens: taken,
                selected_docs: ids.len(),
                available_tokens,
                shortfall: taken < quota,
            };
            (lang, fill, ids)
        })
        .collect();
    let mut out = Selection::default();
    for (lang, fill, ids) in per_lang {
        if fill.shortfall {
            log::warn!(
                "{lang}: quota {} unreachable, only {} tokens available",
                fill.quota,
                fill.available_tokens
            );
        }
        out.fills.insert(lang, fill);
        out.selected.extend(ids);
    }
    out.selected.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub total_budget_tokens: u64,
    pub repetition: u32,
    pub unique_budget: u64,
    /// `total_budget_tokens - repetition * unique_budget`.
    pub remainder: u64,
    #[serde(default)]
    pub quotas: BTreeMap<LanguageTag, u64>,
}

pub fn plan_repetitions(total_horizon: u64, k: i64) -> Result<SelectionPlan, SelectionError> {
    if k < 1 || k > u32::MAX as i64 {
        return Err(SelectionError::InvalidRepetition(k));
    }
    if total_horizon == 0 {
        return Err(SelectionError::ZeroBudget);
    }
    let unique_budget = total_horizon / k as u64;
    if unique_budget == 0 {
        return Err(SelectionError::ZeroBudget);
    }
    Ok(SelectionPlan {
        total_budget_tokens: total_horizon,
        repetition: k as u32,
        unique_budget,
        remainder: total_horizon - unique_budget * k as u64,
        quotas: BTreeMap::new(),
    })
}

impl SelectionPlan {
    pub fn with_mix(mut self, mix: &MixRatio) -> Result<Self, SelectionError> {
        self.quotas = compute_quotas(mix, self.unique_budget)?;
        Ok(self)
    }
}

/// Where Python reweighting was applied in the phase-3 plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReweightScope {
    SeedSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PythonReweighting {
    pub target_share: f64,
    pub applied_at: ReweightScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub plan: SelectionPlan,
    /// Absent when the input carried no tokens.
    pub mix: Option<MixRatio>,
    pub python_reweighting: Option<PythonReweighting>,
    pub fills: BTreeMap<LanguageTag, LanguageFill>,
    pub selected_tokens: u64,
    pub selected: Vec<String>,
}

impl SelectionManifest {
    pub fn new(
        plan: SelectionPlan,
        mix: Option<MixRatio>,
        python_reweighting: Option<PythonReweighting>,
        selection: Selection,
    ) -> Self {
        Self {
            plan,
            mix,
            python_reweighting,
            selected_tokens: selection.selected_tokens(),
            fills: selection.fills,
            selected: selection.selected,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        write_json(path, self)
    }
}
