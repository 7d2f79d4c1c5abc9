//! Distributions over binary masks with an exact cardinality constraint.

mod dp;
mod gumbel;
mod saddle;

use serde::{Deserialize, Serialize};

pub use dp::{dp_conditional_marginals, dp_exact_log_prob, dp_exact_sample, dp_log_pmf, dp_log_prob_grad, ExactSampler};
pub use gumbel::{gumbel_topk_sample, gumbel_topk_sample_with};
pub use saddle::{saddlepoint, saddlepoint_log_prob, saddlepoint_log_prob_grad, SaddlePoint};

use crate::error::{invalid, Result};
use crate::mesh::SensorMask;

/// Clamp applied to every inclusion probability.
pub const PROB_EPS: f64 = 1e-6;

/// Bernoulli parameters `q`, clamped to `[PROB_EPS, 1 - PROB_EPS]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InclusionProbs(Vec<f64>);

impl InclusionProbs {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return invalid("inclusion probabilities need at least one node");
        }
        if q.iter().any(|v| !v.is_finite()) {
            return invalid("inclusion probabilities must be finite");
        }
        Ok(Self(q.into_iter().map(|v| v.clamp(PROB_EPS, 1.0 - PROB_EPS)).collect()))
    }

    pub fn uniform(n: usize, q: f64) -> Result<Self> {
        Self::new(vec![q; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Unconstrained Bernoulli log-likelihood `Σ a log q + (1 - a) log(1 - q)`.
    pub fn bernoulli_log_prob(&self, a: &SensorMask) -> Result<f64> {
        self.check_len(a)?;
        Ok(self
            .0
            .iter()
            .zip(a.bits())
            .map(|(&q, &on)| if on { q.ln() } else { (1.0 - q).ln() })
            .sum())
    }

    /// Gradient of [`Self::bernoulli_log_prob`] with respect to `q`.
    pub fn bernoulli_log_prob_grad(&self, a: &SensorMask) -> Result<Vec<f64>> {
        self.check_len(a)?;
        Ok(self
            .0
            .iter()
            .zip(a.bits())
            .map(|(&q, &on)| if on { 1.0 / q } else { -1.0 / (1.0 - q) })
            .collect())
    }

    fn check_len(&self, a: &SensorMask) -> Result<()> {
        if a.len() != self.len() {
            return invalid(format!("mask of length {} for {} probabilities", a.len(), self.len()));
        }
        Ok(())
    }
}

fn check_m(n: usize, m: usize) -> Result<()> {
    if m > n {
        return invalid(format!("cardinality {m} exceeds {n} nodes"));
    }
    Ok(())
}

/// How `log P(Σa = m)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogProbMode {
    ExactDp,
    Saddlepoint,
}

/// `log π(a | Σa = m)`; errors when `a` does not have exactly `m` ones.
pub fn constrained_log_prob(a: &SensorMask, q: &InclusionProbs, m: usize, mode: LogProbMode) -> Result<f64> {
    Ok(constrained_log_prob_grad(a, q, m, mode)?.0)
}

/// [`constrained_log_prob`] and its gradient with respect to `q`.
pub fn constrained_log_prob_grad(
    a: &SensorMask,
    q: &InclusionProbs,
    m: usize,
    mode: LogProbMode,
) -> Result<(f64, Vec<f64>)> {
    if a.count() != m {
        return invalid(format!("mask has {} sensors, constraint requires {m}", a.count()));
    }
    let joint = q.bernoulli_log_prob(a)?;
    let mut grad = q.bernoulli_log_prob_grad(a)?;
    let (norm, norm_grad) = match mode {
        LogProbMode::ExactDp => dp_log_prob_grad(q, m)?,
        LogProbMode::Saddlepoint => saddlepoint_log_prob_grad(q, m)?,
    };
    for (g, d) in grad.iter_mut().zip(norm_grad) {
        *g -= d;
    }
    Ok((joint - norm, grad))
}

/// `R - λ (m - Σa)²`.
pub fn penalized_reward(reward: f64, a: &SensorMask, m_target: usize, lambda: f64) -> f64 {
    let violation = m_target as f64 - a.count() as f64;
    reward - lambda * violation * violation
}
