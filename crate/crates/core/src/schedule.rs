//! Closed-form learning-rate schedules.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::write_atomic;

pub const MAX_LR: f64 = 5.3e-4;
pub const MIN_LR: f64 = 5.3e-5;
pub const PRETRAIN_WARMUP: usize = 600;
pub const REWARMUP_ITERS: usize = 1000;
pub const SEQ_LEN: u64 = 8192;
pub const BATCH_SIZE: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    CosineWithWarmup,
    RewarmupLinearDecay,
    Constant,
    LinearAnneal,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScheduleError {
    #[error("iteration {iter} outside [0, {total}]")]
    OutOfRange { iter: usize, total: usize },
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePhase {
    pub shape: Shape,
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_iters: usize,
    pub total_iters: usize,
}

impl SchedulePhase {
    /// General pretraining: 600 warmup iterations, cosine to the minimum.
    pub fn pretraining(total_iters: usize) -> Self {
        Self {
            shape: Shape::CosineWithWarmup,
            max_lr: MAX_LR,
            min_lr: MIN_LR,
            warmup_iters: PRETRAIN_WARMUP,
            total_iters,
        }
    }

    /// Continued pretraining: 1000 warmup iterations, linear decay to 0.
    pub fn rewarmup(total_iters: usize) -> Self {
        Self {
            shape: Shape::RewarmupLinearDecay,
            max_lr: MAX_LR,
            min_lr: MIN_LR,
            warmup_iters: REWARMUP_ITERS,
            total_iters,
        }
    }

    pub fn constant(total_iters: usize) -> Self {
        Self {
            shape: Shape::Constant,
            max_lr: MAX_LR,
            min_lr: MIN_LR,
            warmup_iters: 0,
            total_iters,
        }
    }

    pub fn linear_anneal(total_iters: usize) -> Self {
        Self {
            shape: Shape::LinearAnneal,
            max_lr: MAX_LR,
            min_lr: MIN_LR,
            warmup_iters: 0,
            total_iters,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.total_iters == 0 {
            return Err(ScheduleError::Invalid("total_iters must be positive".into()));
        }
        if self.warmup_iters > self.total_iters {
            return Err(ScheduleError::Invalid(format!(
                "warmup {} exceeds total {}",
                self.warmup_iters, self.total_iters
            )));
        }
        if !(self.min_lr.is_finite() && self.max_lr.is_finite() && self.max_lr >= self.min_lr && self.min_lr >= 0.0) {
            return Err(ScheduleError::Invalid(format!(
                "need max_lr >= min_lr >= 0, got {} and {}",
                self.max_lr, self.min_lr
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> Result<f64, ScheduleError> {
        self.validate()?;
        let (w, n) = (self.warmup_iters, self.total_iters);
        if iter > n {
            return Err(ScheduleError::OutOfRange { iter, total: n });
        }
        let warm = |i: usize| self.max_lr * i as f64 / w as f64;
        let lr = match self.shape {
            Shape::Constant => self.min_lr,
            Shape::LinearAnneal => self.min_lr * (n - iter) as f64 / n as f64,
            Shape::CosineWithWarmup if iter < w => warm(iter),
            Shape::RewarmupLinearDecay if iter < w => warm(iter),
            _ if iter == w => self.max_lr,
            Shape::CosineWithWarmup => {
                let t = (iter - w) as f64 / (n - w) as f64;
                self.min_lr + (self.max_lr - self.min_lr) * (1.0 + (PI * t).cos()) / 2.0
            }
            Shape::RewarmupLinearDecay => self.max_lr * (n - iter) as f64 / (n - w) as f64,
        };
        Ok(lr)
    }

    /// Rows at 0, every `stride` iterations, and `total_iters`.
    pub fn emit_schedule(&self, stride: usize) -> Result<Vec<(usize, f64)>, ScheduleError> {
        if stride == 0 {
            return Err(ScheduleError::Invalid("stride must be at least 1".into()));
        }
        let mut iters: Vec<usize> = (0..=self.total_iters).step_by(stride).collect();
        if iters.last() != Some(&self.total_iters) {
            iters.push(self.total_iters);
        }
        iters.into_iter().map(|i| Ok((i, self.lr_at(i)?))).collect()
    }
}

/// Iterations needed to consume `tokens` at `seq_len × batch` tokens each.
pub fn iterations_for_tokens(tokens: u64, seq_len: u64, batch_size: u64) -> usize {
    tokens.div_ceil(seq_len * batch_size) as usize
}

/// Tab-separated `iter\tlr` with a header line. Floats use the shortest
/// representation that round-trips.
pub fn schedule_tsv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("iter\tlr\n");
    for (i, lr) in rows {
        let _ = writeln!(s, "{i}\t{lr:?}");
    }
    s
}

pub fn write_schedule(path: &Path, rows: &[(usize, f64)]) -> std::io::Result<()> {
    write_atomic(path, schedule_tsv(rows).as_bytes())
}
