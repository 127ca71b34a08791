use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::geom::TransformParams;

/// Weights of the relative-translation / rotation loss. Translations are in
/// millimeters, which fixes the meaning of `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            epsilon: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::BadConfig(format!(
                "loss weights must be non-negative, got α={} β={}",
                self.alpha, self.beta
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::BadConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Per-output weights `w` such that the loss is `Σ w·(θ̂ − θ)²`.
    fn weights(&self, theta: &TransformParams) -> [f64; 12] {
        let t2: f64 = theta.theta_t.iter().map(|v| v * v).sum();
        let wt = self.alpha / (t2 + self.epsilon);
        std::array::from_fn(|i| if i < 9 { self.beta } else { wt })
    }
}

/// `α‖θᵗ − θ̂ᵗ‖² / (‖θᵗ‖² + ε) + β‖θʳ − θ̂ʳ‖²` for one sample.
pub fn loss(theta: &TransformParams, theta_hat: &[f64; 12], cfg: &LossConfig) -> f64 {
    let w = cfg.weights(theta);
    theta
        .to_array()
        .iter()
        .zip(theta_hat)
        .zip(w)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum()
}

/// Batch-mean loss as a graph node over a `[N, 12]` prediction.
pub fn loss_node<T: Scalar>(
    g: &mut Graph<T>,
    pred: NodeId,
    targets: &[TransformParams],
    cfg: &LossConfig,
) -> Result<NodeId> {
    let n = targets.len();
    if g.shape(pred) != [n, 12] {
        return Err(Error::shape(format!(
            "prediction {:?} for {n} targets",
            g.shape(pred)
        )));
    }
    let mut target = Vec::with_capacity(12 * n);
    let mut weight = Vec::with_capacity(12 * n);
    for t in targets {
        target.extend(t.to_array());
        weight.extend(cfg.weights(t).map(|w| w / n as f64));
    }
    let target = g.input(Tensor::from_f64(vec![n, 12], &target)?);
    let weight = g.input(Tensor::from_f64(vec![n, 12], &weight)?);
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    let wsq = g.mul(sq, weight)?;
    Ok(g.sum_all(wsq))
}
