//! Learned sensor placement: actor and critic graph networks trained with a
//! penalized and then a cardinality-constrained PPO stage.

mod nets;
mod ppo;
mod reward;

pub use nets::{log_prob_var, MaskLaw, PolicyConfig, PolicyNet, ValueNet};
pub use ppo::{clipped_surrogate, IterationLog, PpoAgent, PpoConfig, Rollout, RolloutBatch, Stage, UpdateStats};
pub use reward::{reward, KnnReconstructor, MeanReconstructor, ReconReward, Reconstructor, RewardModel};
