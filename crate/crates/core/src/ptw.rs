//! Per-category smoothed losses and the POS masking-weight vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{PosCategory, NUM_CATEGORIES};
use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.99;
pub const DEFAULT_MU: f64 = 1.0;
/// Variance below which all categories are treated as equal.
pub const VAR_EPSILON: f64 = 1e-12;

/// How a batch's masked-token losses are reduced to one value per category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Mean token loss over the category's masked tokens.
    #[default]
    PerTokenMean,
    /// Category's summed token loss divided by all masked tokens; the
    /// category values sum to the batch loss.
    BatchShare,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::PerTokenMean => "per-token-mean",
            LossMode::BatchShare => "batch-share",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-token-mean" => Ok(LossMode::PerTokenMean),
            "batch-share" => Ok(LossMode::BatchShare),
            _ => Err(Error::Config(format!("unknown loss mode {s:?}"))),
        }
    }
}

/// Masking weight per category, each strictly inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn uniform(m: usize) -> Self {
        WeightVector(vec![0.5; m])
    }

    pub fn get(&self, category: PosCategory) -> f64 {
        self.0[category.id()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Standardizes `values` with population mean and variance, scales by
/// `1/mu` and applies the logistic function.
pub fn standardized_sigmoid(values: &[f64], mu: f64) -> WeightVector {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    if !(var >= VAR_EPSILON) {
        return WeightVector::uniform(values.len());
    }
    let scale = var.sqrt() * mu;
    WeightVector(
        values
            .iter()
            .map(|v| {
                let z = (v - mean) / scale;
                // clamp keeps the result strictly inside (0, 1) in floating point
                let w = 1.0 / (1.0 + (-z).exp());
                w.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryLossTracker {
    cum_loss: Vec<f64>,
    /// Number of updates in which each category was present.
    observed: Vec<u64>,
    beta: f64,
    mu: f64,
    step: u64,
}

/// Immutable copy of tracker state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerSnapshot {
    pub step: u64,
    pub cum_loss: Vec<f64>,
    pub observed: Vec<u64>,
    pub weights: WeightVector,
}

impl CategoryLossTracker {
    pub fn new(beta: f64, mu: f64) -> Result<Self> {
        Self::with_categories(NUM_CATEGORIES, beta, mu)
    }

    pub fn with_categories(m: usize, beta: f64, mu: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Config(format!("ptw.beta = {beta} outside (0, 1)")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("ptw.mu = {mu} must be positive")));
        }
        if m == 0 {
            return Err(Error::Config("tracker needs at least one category".into()));
        }
        Ok(Self {
            cum_loss: vec![0.0; m],
            observed: vec![0; m],
            beta,
            mu,
            step: 0,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn cum_loss(&self) -> &[f64] {
        &self.cum_loss
    }

    pub fn observed(&self) -> &[u64] {
        &self.observed
    }

    /// Folds one batch of per-category losses into the smoothed values.
    /// `None` marks a category absent from the batch; its value is left
    /// unchanged.
    pub fn update(&mut self, batch_losses: &[Option<f64>]) -> Result<()> {
        if batch_losses.len() != self.cum_loss.len() {
            return Err(Error::LengthMismatch {
                expected: self.cum_loss.len(),
                got: batch_losses.len(),
            });
        }
        for (k, l) in batch_losses.iter().enumerate() {
            if let Some(l) = *l {
                if !(l >= 0.0) {
                    return Err(Error::NegativeLoss { category: k, value: l });
                }
            }
        }
        for (k, l) in batch_losses.iter().enumerate() {
            if let Some(l) = *l {
                self.cum_loss[k] = self.beta * self.cum_loss[k] + (1.0 - self.beta) * l;
                self.observed[k] += 1;
            }
        }
        self.step += 1;
        Ok(())
    }

    pub fn weights(&self) -> WeightVector {
        standardized_sigmoid(&self.cum_loss, self.mu)
    }

    pub fn snapshot(&self) -> TrackerSnapshot {
        TrackerSnapshot {
            step: self.step,
            cum_loss: self.cum_loss.clone(),
            observed: self.observed.clone(),
            weights: self.weights(),
        }
    }
}
