//! PPO learner: actor-critic network, advantage estimation, the clipped
//! surrogate update and rollout collection.

mod policy;
mod ppo;
mod rollout;

pub use policy::{
    greedy_action, policy_forward, policy_forward_batch, probabilities_from_logits, sample_action,
    PolicyConfig, PolicyGraph, PolicyOutput, PolicyParams,
};
pub use ppo::{
    combine_rewards, gae, normalize_advantages, ppo_loss, ppo_loss_grad, ppo_update,
    MinibatchStats, PpoBatch, PpoConfig, PpoDiagnostics,
};
pub use rollout::{
    collect_rollout, make_workers, RewardMode, RewardShaping, RolloutBatch, RolloutSpec, Worker,
};
