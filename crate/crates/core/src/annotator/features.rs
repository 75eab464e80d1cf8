//! Hashed bag of token n-grams.
//!
//! Tokens are the approximate-regex pieces (word runs and single symbols).
//! The n-gram of order `k` starting at token `i` is hashed as
//! `xxh3_64(seed, [k as u8] ++ join(tokens[i..i+k], 0x1F))` and masked into
//! `D = 2^dim_log2` buckets. Values are term frequencies scaled by
//! `1/sqrt(token count)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::pre_tokenize;
use crate::hashing::hash_bytes;

const TOKEN_SEPARATOR: u8 = 0x1F;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub ngram_orders: Vec<usize>,
    pub dim_log2: u32,
    pub hash_seed: u64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            ngram_orders: vec![1, 2],
            dim_log2: 20,
            hash_seed: 0,
        }
    }
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        1usize << self.dim_log2
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=30).contains(&self.dim_log2) {
            return Err(format!("dim_log2 {} outside 1..=30", self.dim_log2));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.iter().any(|&k| k == 0 || k > 255) {
            return Err(format!("invalid n-gram orders {:?}", self.ngram_orders));
        }
        Ok(())
    }

    /// Bucket of one n-gram.
    pub fn bucket(&self, tokens: &[&str]) -> u32 {
        let mut bytes = Vec::with_capacity(1 + tokens.iter().map(|t| t.len() + 1).sum::<usize>());
        bytes.push(tokens.len() as u8);
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                bytes.push(TOKEN_SEPARATOR);
            }
            bytes.extend_from_slice(t.as_bytes());
        }
        (hash_bytes(&bytes, self.hash_seed) & (self.dim() as u64 - 1)) as u32
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| dense[i] * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn featurize(content: &str, spec: &FeatureSpec) -> FeatureVector {
    let tokens: Vec<&str> = pre_tokenize(content).collect();
    if tokens.is_empty() {
        return FeatureVector::default();
    }
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for &k in &spec.ngram_orders {
        if tokens.len() < k {
            continue;
        }
        for w in tokens.windows(k) {
            *counts.entry(spec.bucket(w)).or_default() += 1.0;
        }
    }
    let scale = 1.0 / (tokens.len() as f64).sqrt();
    let (indices, values) = counts.into_iter().map(|(i, c)| (i, c * scale)).unzip();
    FeatureVector { indices, values }
}
