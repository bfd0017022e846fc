//! Adaptive per-class confidence thresholds and the confident/non-confident
//! split of unlabeled samples.
//!
//! For each class `c` a running mean `p[c]` of the probability the model puts
//! on `c` for labeled samples of class `c` that it classifies correctly is
//! kept. The threshold is `beta * p[c] / (1 + gamma^-epoch)`, which rises
//! towards `beta * p[c]` as training proceeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::argmax;
use crate::NUM_EXPRESSIONS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub beta: f64,
    pub gamma: f64,
    /// Weight kept on the previous running mean per update.
    pub momentum: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            beta: 0.95,
            gamma: std::f64::consts::E,
            momentum: 0.9,
        }
    }
}

impl ThresholdConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!(
                "beta = {} outside (0, 1]",
                self.beta
            )));
        }
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!(
                "gamma = {} must exceed 1",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum = {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStatAccumulator {
    pub mean_prob: [f64; NUM_EXPRESSIONS],
    pub seen: [bool; NUM_EXPRESSIONS],
}

impl Default for ClassStatAccumulator {
    fn default() -> Self {
        Self {
            mean_prob: [0.5; NUM_EXPRESSIONS],
            seen: [false; NUM_EXPRESSIONS],
        }
    }
}

impl ClassStatAccumulator {
    /// Folds in a labeled batch: for each class, the mean probability over
    /// correctly classified samples of that class is blended in with the
    /// configured momentum. Classes without a correct sample are untouched.
    pub fn update(&mut self, probs: &[Vec<f64>], labels: &[usize], momentum: f64) {
        let mut sum = [0.0; NUM_EXPRESSIONS];
        let mut count = [0usize; NUM_EXPRESSIONS];
        for (p, &y) in probs.iter().zip(labels) {
            if argmax(p) == y {
                sum[y] += p[y];
                count[y] += 1;
            }
        }
        for c in 0..NUM_EXPRESSIONS {
            if count[c] > 0 {
                let batch_mean = sum[c] / count[c] as f64;
                self.mean_prob[c] = momentum * self.mean_prob[c] + (1.0 - momentum) * batch_mean;
                self.seen[c] = true;
            }
        }
    }
}

pub fn update_class_stats(
    acc: &mut ClassStatAccumulator,
    probs: &[Vec<f64>],
    labels: &[usize],
    cfg: &ThresholdConfig,
) {
    acc.update(probs, labels, cfg.momentum);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds(pub [f64; NUM_EXPRESSIONS]);

pub fn adaptive_thresholds(
    acc: &ClassStatAccumulator,
    epoch: usize,
    cfg: &ThresholdConfig,
) -> Thresholds {
    let ramp = 1.0 + cfg.gamma.powf(-(epoch as f64));
    Thresholds(acc.mean_prob.map(|p| cfg.beta * p / ramp))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfidencePartition {
    /// `(position in the unlabeled batch, pseudo-label)`.
    pub confident: Vec<(usize, usize)>,
    pub non_confident: Vec<usize>,
}

impl ConfidencePartition {
    /// Per-sample pseudo-label, `None` where not confident.
    pub fn pseudo_labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for &(i, c) in &self.confident {
            out[i] = Some(c);
        }
        out
    }

    pub fn non_confident_mask(&self, n: usize) -> Vec<bool> {
        let mut out = vec![false; n];
        for &i in &self.non_confident {
            out[i] = true;
        }
        out
    }
}

/// A sample is confident when its top probability strictly exceeds the
/// threshold of its top class.
pub fn partition_confident(
    weak_probs: &[Vec<f64>],
    thresholds: &Thresholds,
) -> ConfidencePartition {
    let mut part = ConfidencePartition::default();
    for (i, p) in weak_probs.iter().enumerate() {
        let c = argmax(p);
        if p[c] > thresholds.0[c] {
            part.confident.push((i, c));
        } else {
            part.non_confident.push(i);
        }
    }
    part
}
