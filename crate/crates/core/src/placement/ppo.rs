use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{log_prob_var, MaskLaw, PolicyConfig, PolicyNet, ValueNet};
use super::reward::RewardModel;
use crate::autodiff::{cosine_lr, Adam, Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::mesh::{sensor_count, MeshGraph, SensorMask};
use crate::subset::{constrained_log_prob, gumbel_topk_sample_with, penalized_reward, LogProbMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Penalized,
    Constrained,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Penalized => "penalized",
            Stage::Constrained => "constrained",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Target sensor density; `m = round(density · n)` per graph.
    pub density: f64,
    /// Weight of the squared cardinality violation in the penalized stage.
    pub lambda: f64,
    pub clip: f64,
    /// Gradient steps per collected batch.
    pub update_steps: usize,
    /// Rollouts per iteration.
    pub batch_size: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Reward of all-zero and all-one masks in the penalized stage, before
    /// the penalty.
    pub degenerate_reward: f64,
    pub log_prob_mode: LogProbMode,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            density: 0.10,
            lambda: 0.00015,
            clip: 0.2,
            update_steps: 5,
            batch_size: 32,
            stage1_iters: 3000,
            stage2_iters: 1000,
            lr_start: 1e-5,
            lr_end: 1e-7,
            degenerate_reward: -10.0,
            log_prob_mode: LogProbMode::Saddlepoint,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density {} outside (0, 1]", self.density)));
        }
        if !(self.lambda >= 0.0 && self.clip > 0.0 && self.lr_start > 0.0 && self.lr_end >= 0.0) {
            return Err(Error::Config("lambda, clip and learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.update_steps == 0 {
            return Err(Error::Config("batch_size and update_steps must be positive".into()));
        }
        if !self.degenerate_reward.is_finite() {
            return Err(Error::Config("degenerate_reward must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Index into the graph set the batch was collected on.
    pub graph: usize,
    pub mask: SensorMask,
    pub law: MaskLaw,
    pub old_log_prob: f64,
    /// `R̂` in the penalized stage, `R` in the constrained stage.
    pub reward: f64,
    /// `|Σa - m|`.
    pub violation: f64,
    pub advantage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub stage: Stage,
    pub rollouts: Vec<Rollout>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.rollouts.iter().map(|r| r.reward).sum::<f64>() / self.len().max(1) as f64
    }

    pub fn mean_violation(&self) -> f64 {
        self.rollouts.iter().map(|r| r.violation).sum::<f64>() / self.len().max(1) as f64
    }
}

/// `min(r A, clip(r, 1 - ε, 1 + ε) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Clipped surrogate averaged over the batch, at the first step.
    pub surrogate: f64,
    /// Value loss at the first step.
    pub value_loss: f64,
    /// Fraction of ratios outside `[1 - ε, 1 + ε]`, over all steps.
    pub clip_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub stage: Stage,
    pub mean_reward: f64,
    pub mean_violation: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
}

/// Actor, critic and their optimiser states.
#[derive(Clone, Debug)]
pub struct PpoAgent {
    pub policy: PolicyNet,
    pub value: ValueNet,
    adam_policy: Adam,
    adam_value: Adam,
}

impl PpoAgent {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        Ok(Self::from_nets(PolicyNet::new(config)?, ValueNet::new(config)?))
    }

    pub fn from_nets(policy: PolicyNet, value: ValueNet) -> Self {
        let adam_policy = Adam::new(&policy.params);
        let adam_value = Adam::new(&value.params);
        Self {
            policy,
            value,
            adam_policy,
            adam_value,
        }
    }

    /// Independent Bernoulli masks scored by the penalized reward.
    pub fn collect_penalized<E: RewardModel + ?Sized>(
        &self,
        graphs: &[MeshGraph],
        ids: &[usize],
        env: &E,
        cfg: &PpoConfig,
        seed: u64,
    ) -> Result<RolloutBatch> {
        self.collect(Stage::Penalized, graphs, ids, env, cfg, seed)
    }

    /// Exactly-`m` masks from Gumbel top-k scored by the plain reward.
    pub fn collect_constrained<E: RewardModel + ?Sized>(
        &self,
        graphs: &[MeshGraph],
        ids: &[usize],
        env: &E,
        cfg: &PpoConfig,
        seed: u64,
    ) -> Result<RolloutBatch> {
        self.collect(Stage::Constrained, graphs, ids, env, cfg, seed)
    }

    fn collect<E: RewardModel + ?Sized>(
        &self,
        stage: Stage,
        graphs: &[MeshGraph],
        ids: &[usize],
        env: &E,
        cfg: &PpoConfig,
        seed: u64,
    ) -> Result<RolloutBatch> {
        if ids.is_empty() {
            return invalid("rollout collection needs at least one graph");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rollouts = Vec::with_capacity(ids.len());
        let mut baselines = Vec::with_capacity(ids.len());
        for &g in ids {
            let mesh = graphs
                .get(g)
                .ok_or_else(|| Error::InvalidArgument(format!("graph {g} of {}", graphs.len())))?;
            let n = mesh.node_count();
            let m = sensor_count(n, cfg.density)?;
            let q = self.policy.probs(mesh)?;
            let mut local = ChaCha8Rng::seed_from_u64(rng.random());
            let (mask, law) = match stage {
                Stage::Penalized => (
                    SensorMask::new(q.as_slice().iter().map(|&p| local.random::<f64>() < p).collect()),
                    MaskLaw::Bernoulli,
                ),
                Stage::Constrained => (
                    gumbel_topk_sample_with(&q, m, &mut local)?,
                    MaskLaw::Constrained { m, mode: cfg.log_prob_mode },
                ),
            };
            let old_log_prob = match law {
                MaskLaw::Bernoulli => q.bernoulli_log_prob(&mask)?,
                MaskLaw::Constrained { m, mode } => constrained_log_prob(&mask, &q, m, mode)?,
            };
            let fill_seed: u64 = local.random();
            let k = mask.count();
            let reward = match stage {
                Stage::Penalized => {
                    let base = if k == 0 || k == n {
                        cfg.degenerate_reward
                    } else {
                        env.reward(mesh, &mask, fill_seed)?
                    };
                    penalized_reward(base, &mask, m, cfg.lambda)
                }
                Stage::Constrained => env.reward(mesh, &mask, fill_seed)?,
            };
            if !reward.is_finite() || !old_log_prob.is_finite() {
                return Err(Error::NonFinite(format!("rollout on graph {g}")));
            }
            baselines.push(self.value.value(mesh)?);
            rollouts.push(Rollout {
                graph: g,
                violation: (k as f64 - m as f64).abs(),
                mask,
                law,
                old_log_prob,
                reward,
                advantage: 0.0,
            });
        }
        let raw: Vec<f64> = rollouts.iter().zip(&baselines).map(|(r, v)| r.reward - v).collect();
        for (r, a) in rollouts.iter_mut().zip(normalize(&raw)) {
            r.advantage = a;
        }
        Ok(RolloutBatch { stage, rollouts })
    }

    /// Adds the gradient of the negated clipped surrogate (batch mean) to the
    /// policy parameters. Returns the surrogate and the clip fraction.
    pub fn accumulate_policy_grads(&mut self, graphs: &[MeshGraph], batch: &RolloutBatch, clip: f64) -> Result<(f64, f64)> {
        let b = batch.len() as f64;
        let (mut surrogate, mut clipped) = (0.0, 0usize);
        for ro in &batch.rollouts {
            let mesh = &graphs[ro.graph];
            let mut tape = Tape::new();
            let z = self.policy.logits(&mut tape, &self.policy.params, mesh)?;
            let lp = log_prob_var(&mut tape, z, &ro.mask, ro.law)?;
            let new = tape.value(lp).item();
            let ratio = (new - ro.old_log_prob).exp();
            if !ratio.is_finite() {
                return Err(Error::NonFinite(format!(
                    "probability ratio on graph {} (log-prob {new}, old {})",
                    ro.graph, ro.old_log_prob
                )));
            }
            let a = ro.advantage;
            surrogate += clipped_surrogate(ratio, a, clip) / b;
            if (ratio - 1.0).abs() > clip {
                clipped += 1;
            }
            // the min picks the clipped branch, which is flat in the parameters
            let active = if a >= 0.0 { ratio <= 1.0 + clip } else { ratio >= 1.0 - clip };
            if !active || a == 0.0 {
                continue;
            }
            // ∇(r A) = r A ∇log π
            let loss = tape.scale(lp, -ratio * a / b)?;
            tape.backward(loss, &mut self.policy.params)?;
        }
        Ok((surrogate, clipped as f64 / b))
    }

    /// Adds the gradient of the mean squared value error to the critic and
    /// returns that error.
    pub fn accumulate_value_grads(&mut self, graphs: &[MeshGraph], batch: &RolloutBatch) -> Result<f64> {
        let b = batch.len() as f64;
        let mut total = 0.0;
        for ro in &batch.rollouts {
            let mut tape = Tape::new();
            let v = self.value.value_var(&mut tape, &self.value.params, &graphs[ro.graph])?;
            let target = tape.leaf(Tensor::scalar(ro.reward))?;
            let diff = tape.sub(v, target)?;
            let sq = tape.mul(diff, diff)?;
            total += tape.value(sq).item() / b;
            let loss = tape.scale(sq, 1.0 / b)?;
            tape.backward(loss, &mut self.value.params)?;
        }
        Ok(total)
    }

    /// `update_steps` Adam steps on the clipped surrogate and the value loss.
    pub fn ppo_update(&mut self, graphs: &[MeshGraph], batch: &RolloutBatch, cfg: &PpoConfig, lr: f64) -> Result<UpdateStats> {
        if batch.is_empty() {
            return invalid("ppo_update needs a nonempty batch");
        }
        let mut stats = UpdateStats::default();
        for step in 0..cfg.update_steps {
            self.policy.params.zero_grads();
            self.value.params.zero_grads();
            let (surrogate, clip_fraction) = self.accumulate_policy_grads(graphs, batch, cfg.clip)?;
            let value_loss = self.accumulate_value_grads(graphs, batch)?;
            if !self.policy.params.grad_norm().is_finite() || !self.value.params.grad_norm().is_finite() {
                return Err(Error::NonFinite(format!("policy or value gradient at update step {step}")));
            }
            if step == 0 {
                stats.surrogate = surrogate;
                stats.value_loss = value_loss;
            }
            stats.clip_fraction += clip_fraction / cfg.update_steps as f64;
            self.adam_policy.step(&mut self.policy.params, lr);
            self.adam_value.step(&mut self.value.params, lr);
        }
        Ok(stats)
    }

    /// Penalized stage for `stage1_iters`, then constrained stage for
    /// `stage2_iters`, with one cosine schedule across both.
    pub fn train_two_step<E, F>(
        &mut self,
        graphs: &[MeshGraph],
        env: &E,
        cfg: &PpoConfig,
        mut on_iteration: F,
    ) -> Result<Vec<IterationLog>>
    where
        E: RewardModel + ?Sized,
        F: FnMut(&IterationLog),
    {
        cfg.validate()?;
        if graphs.is_empty() {
            return invalid("policy training needs at least one graph");
        }
        let total = cfg.stage1_iters + cfg.stage2_iters;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut history = Vec::with_capacity(total);
        for it in 0..total {
            let stage = if it < cfg.stage1_iters {
                Stage::Penalized
            } else {
                Stage::Constrained
            };
            let ids: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..graphs.len())).collect();
            let batch = self.collect(stage, graphs, &ids, env, cfg, rng.random())?;
            let lr = cosine_lr(cfg.lr_start, cfg.lr_end, it, total);
            let stats = self.ppo_update(graphs, &batch, cfg, lr).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {it}")),
                other => other,
            })?;
            let row = IterationLog {
                iteration: it,
                stage,
                mean_reward: batch.mean_reward(),
                mean_violation: batch.mean_violation(),
                value_loss: stats.value_loss,
                clip_fraction: stats.clip_fraction,
            };
            on_iteration(&row);
            history.push(row);
        }
        Ok(history)
    }
}

/// Zero mean and unit standard deviation; only centred when the spread is
/// negligible.
fn normalize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-8 { 1.0 / std } else { 1.0 };
    x.iter().map(|v| (v - mean) * scale).collect()
}
