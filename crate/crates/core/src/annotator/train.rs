//! Averaged SGD for sparse linear models.
//!
//! The dense weight vector is stored as `w = v / D`, so the L2 shrink of
//! every step is a scalar update of `D`. The running average of iterates is
//! stored as `avg = (u + F v) / C` and only touches the coordinates of the
//! current example; see [`SparseAsgd::step`]. Both representations are
//! folded back into plain vectors when the scalars grow large.

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::AnnotatorMode;
use crate::hashing::{derive_seed, hash_bytes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 0.1,
            l2: 1e-6,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(format!("l2 {} must be non-negative", self.l2));
        }
        Ok(())
    }

    /// Step size at global step `t` over a dataset of `n` examples:
    /// `lr / (1 + t / n)`, i.e. 1/t decay measured in epochs.
    pub fn step_size(&self, t: usize, n: usize) -> f64 {
        self.learning_rate / (1.0 + t as f64 / n.max(1) as f64)
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-example loss at margin `z`.
pub fn loss(mode: AnnotatorMode, z: f64, y: f64) -> f64 {
    match mode {
        // log(1 + e^z) - y z, computed stably
        AnnotatorMode::Classification => z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z,
        AnnotatorMode::Regression => 0.5 * (z - y) * (z - y),
    }
}

/// Derivative of [`loss`] with respect to `z`.
pub fn dloss(mode: AnnotatorMode, z: f64, y: f64) -> f64 {
    match mode {
        AnnotatorMode::Classification => sigmoid(z) - y,
        AnnotatorMode::Regression => z - y,
    }
}

/// Full-batch objective `mean_i loss(w·x_i + b, y_i) + l2/2 ‖w‖²` and its
/// gradient `(∂/∂w, ∂/∂b)`.
pub fn objective(
    mode: AnnotatorMode,
    features: &[FeatureVector],
    labels: &[f64],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut grad = weights.iter().map(|w| l2 * w).collect::<Vec<_>>();
    let mut gb = 0.0;
    let mut total = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = x.dot(weights) + bias;
        total += loss(mode, z, y);
        let g = dloss(mode, z, y) / n;
        for (i, v) in x.iter() {
            grad[i] += g * v;
        }
        gb += g;
    }
    let reg = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (total / n + reg, grad, gb)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("training loss became non-finite at epoch {epoch}; reduce `{hyperparameter}` (was {value})")]
    Divergence {
        hyperparameter: &'static str,
        value: f64,
        epoch: usize,
    },
    #[error("invalid hyperparameters: {0}")]
    Config(String),
}

/// Learned parameters plus the mean progressive training loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedLinear {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_trace: Vec<f64>,
}

const RENORM_LIMIT: f64 = 1e5;

struct SparseAsgd {
    v: Vec<f64>,
    divisor: f64,
    bias: f64,
    // averaged iterate: (u + frac * v) / avg_divisor
    u: Vec<f64>,
    avg_divisor: f64,
    frac: f64,
    avg_bias: f64,
    avg_steps: usize,
}

impl SparseAsgd {
    fn new(dim: usize) -> Self {
        Self {
            v: vec![0.0; dim],
            divisor: 1.0,
            bias: 0.0,
            u: vec![0.0; dim],
            avg_divisor: 1.0,
            frac: 0.0,
            avg_bias: 0.0,
            avg_steps: 0,
        }
    }

    fn margin(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.v) / self.divisor + self.bias
    }

    /// One SGD step with gradient scale `g = dloss/dz`, then (when
    /// averaging) fold the new iterate into the uniform average.
    ///
    /// With `D' = D / (1 - ηλ)` and `δ = -η g D' x`, the update
    /// `v ← v + δ` realises `w ← (1-ηλ) w - η g x`. Keeping the average
    /// fixed across that change needs `u ← u - F δ`; blending in the new
    /// iterate with weight `μ` gives `C' = C / (1-μ)` and
    /// `F' = F + μ C' / D'`.
    fn step(&mut self, x: &FeatureVector, g: f64, eta: f64, l2: f64, averaging: bool) {
        self.divisor /= 1.0 - eta * l2;
        let scale = -eta * g * self.divisor;
        if averaging {
            self.avg_steps += 1;
            let mu = 1.0 / self.avg_steps as f64;
            for (i, xv) in x.iter() {
                let delta = scale * xv;
                self.v[i] += delta;
                self.u[i] -= self.frac * delta;
            }
            self.bias -= eta * g;
            if self.avg_steps == 1 {
                self.u.iter_mut().for_each(|u| *u = 0.0);
                self.avg_divisor = self.divisor;
                self.frac = 1.0;
                self.avg_bias = self.bias;
            } else {
                self.avg_divisor /= 1.0 - mu;
                self.frac += mu * self.avg_divisor / self.divisor;
                self.avg_bias = (1.0 - mu) * self.avg_bias + mu * self.bias;
            }
        } else {
            for (i, xv) in x.iter() {
                self.v[i] += scale * xv;
            }
            self.bias -= eta * g;
        }
        if self.divisor > RENORM_LIMIT || self.avg_divisor > RENORM_LIMIT {
            self.renormalize();
        }
    }

    fn renormalize(&mut self) {
        if self.avg_steps > 0 {
            let (f, c) = (self.frac, self.avg_divisor);
            for (u, v) in self.u.iter_mut().zip(&self.v) {
                *u = (*u + f * v) / c;
            }
            self.avg_divisor = 1.0;
            self.frac = 0.0;
        }
        let d = self.divisor;
        self.v.iter_mut().for_each(|v| *v /= d);
        self.divisor = 1.0;
    }

    fn into_weights(mut self) -> (Vec<f64>, f64) {
        self.renormalize();
        if self.avg_steps > 0 {
            (self.u, self.avg_bias)
        } else {
            (self.v, self.bias)
        }
    }
}

/// Visiting order for `epoch`: indices sorted by a hash of `(seed, epoch,
/// index)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let s = derive_seed(seed, "epoch", epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (hash_bytes(&(i as u64).to_le_bytes(), s), i));
    order
}

/// First epoch whose iterates enter the average. Averaging skips the first
/// epoch when there is more than one, so the zero initialisation does not
/// bias the result.
pub fn averaging_start(epochs: usize) -> usize {
    usize::from(epochs > 1)
}

/// Train a linear model by averaged SGD in a seed-fixed order.
pub fn train_linear(
    mode: AnnotatorMode,
    features: &[FeatureVector],
    labels: &[f64],
    dim: usize,
    hyper: &Hyperparameters,
) -> Result<TrainedLinear, TrainError> {
    hyper.validate().map_err(TrainError::Config)?;
    assert_eq!(features.len(), labels.len());
    let n = features.len();
    let mut state = SparseAsgd::new(dim);
    let mut trace = Vec::with_capacity(hyper.epochs);
    let avg_start = averaging_start(hyper.epochs);
    let mut t = 0usize;
    for epoch in 0..hyper.epochs {
        let mut epoch_loss = 0.0;
        for i in epoch_order(n, hyper.seed, epoch) {
            let (x, y) = (&features[i], labels[i]);
            let z = state.margin(x);
            let l = loss(mode, z, y);
            if !l.is_finite() || !z.is_finite() {
                return Err(TrainError::Divergence {
                    hyperparameter: "learning_rate",
                    value: hyper.learning_rate,
                    epoch,
                });
            }
            epoch_loss += l;
            let eta = hyper.step_size(t, n);
            state.step(x, dloss(mode, z, y), eta, hyper.l2, epoch >= avg_start);
            t += 1;
        }
        trace.push(epoch_loss / n.max(1) as f64);
    }
    let (weights, bias) = state.into_weights();
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(TrainError::Divergence {
            hyperparameter: "learning_rate",
            value: hyper.learning_rate,
            epoch: hyper.epochs.saturating_sub(1),
        });
    }
    Ok(TrainedLinear {
        weights,
        bias,
        loss_trace: trace,
    })
}
