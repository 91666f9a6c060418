//! Synchronous rollout collection over a set of environment workers.

use std::collections::VecDeque;

use ficm_numerics::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use super::policy::{policy_forward_batch, sample_action, PolicyParams};
use super::ppo::{combine_rewards, gae, PpoBatch, PpoConfig};
use crate::curiosity::{Generator, RewardNormalizer, TransitionRefs};
use crate::envs::{reset, Env, EnvConfig, Observation};
use crate::error::{config_err, Result};

/// Which reward streams reach the learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Intrinsic reward only; episodes restart silently and the learner
    /// never sees a terminal flag.
    IntrinsicOnly,
    ExtrinsicOnly,
    Combined,
}

impl RewardMode {
    pub fn uses_extrinsic(self) -> bool {
        self != RewardMode::IntrinsicOnly
    }

    pub fn uses_intrinsic(self) -> bool {
        self != RewardMode::ExtrinsicOnly
    }

    /// Environments restart without reporting `done` in this mode.
    pub fn hides_episode_ends(self) -> bool {
        self == RewardMode::IntrinsicOnly
    }
}

/// Turns raw novelty into the intrinsic reward stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardShaping {
    pub mode: RewardMode,
    pub zeta: f64,
    /// Running standard-deviation scaling, when enabled.
    pub normalizer: Option<RewardNormalizer>,
}

impl RewardShaping {
    pub fn new(mode: RewardMode, zeta: f64, normalize: bool) -> Self {
        Self {
            mode,
            zeta,
            normalizer: normalize.then(RewardNormalizer::new),
        }
    }

    /// `zeta * normalize(raw)`, or `zeta * raw` without a normalizer.
    pub fn shape(&mut self, raw: f64) -> f64 {
        match &mut self.normalizer {
            Some(n) => self.zeta * n.normalize(raw),
            None => self.zeta * raw,
        }
    }
}

/// One environment with its recent frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub env: Env,
    frames: VecDeque<Observation>,
    depth: usize,
    episode_return: f64,
}

impl Worker {
    /// `depth` is the longest frame stack any consumer asks for.
    pub fn new(cfg: &EnvConfig, depth: usize) -> Result<Self> {
        if depth == 0 {
            return config_err("frame depth must be positive");
        }
        let (env, obs) = reset(cfg)?;
        let mut w = Self {
            env,
            frames: VecDeque::with_capacity(depth),
            depth,
            episode_return: 0.0,
        };
        w.refill(obs);
        Ok(w)
    }

    pub fn refill(&mut self, obs: Observation) {
        self.frames.clear();
        for _ in 0..self.depth {
            self.frames.push_back(obs.clone());
        }
    }

    pub fn push_frame(&mut self, obs: Observation) {
        if self.frames.len() == self.depth {
            self.frames.pop_front();
        }
        self.frames.push_back(obs);
    }

    /// The newest `k` frames concatenated along channels, oldest first.
    pub fn stacked(&self, k: usize) -> Observation {
        let k = k.min(self.depth);
        let frames: Vec<&Observation> = self.frames.iter().skip(self.depth - k).collect();
        let s = frames[0].shape().to_vec();
        let mut data = Vec::with_capacity(k * frames[0].numel());
        for f in &frames {
            data.extend_from_slice(f.data());
        }
        Tensor::new(&[k * s[0], s[1], s[2]], data).expect("stacked frame extents")
    }
}

/// Builds `count` workers on identical environments.
pub fn make_workers(cfg: &EnvConfig, count: usize, depth: usize) -> Result<Vec<Worker>> {
    (0..count).map(|_| Worker::new(cfg, depth)).collect()
}

/// `T` steps from each of `W` workers, stored worker-major
/// (index `w * T + t`).
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub workers: usize,
    pub horizon: usize,
    pub policy_obs: Vec<Observation>,
    /// Curiosity input before and after each step. Empty when no
    /// generator is configured.
    pub curiosity_obs: Vec<Observation>,
    pub curiosity_next: Vec<Observation>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub ext_rewards: Vec<f64>,
    /// Shaped intrinsic rewards.
    pub int_rewards: Vec<f64>,
    /// Generator output before scaling and normalization.
    pub raw_intrinsic: Vec<f64>,
    /// Terminal flags as seen by the learner.
    pub dones: Vec<bool>,
    /// Episode ended on this step, including silent restarts.
    pub episode_over: Vec<bool>,
    /// Value of each worker's state after its last step.
    pub bootstrap: Vec<f64>,
    /// Extrinsic returns of episodes that ended during the rollout.
    pub episode_returns: Vec<f64>,
    pub episode_successes: Vec<bool>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Reward stream of the learner under `mode`.
    pub fn training_rewards(&self, mode: RewardMode) -> Vec<f64> {
        self.ext_rewards
            .iter()
            .zip(&self.int_rewards)
            .map(|(&e, &i)| {
                let e = if mode.uses_extrinsic() { e } else { 0.0 };
                let i = if mode.uses_intrinsic() { i } else { 0.0 };
                combine_rewards(e, i)
            })
            .collect()
    }

    /// Per-worker advantage estimation, concatenated worker-major.
    pub fn advantages(&self, mode: RewardMode, cfg: &PpoConfig) -> Result<(Vec<f64>, Vec<f64>)> {
        let rewards = self.training_rewards(mode);
        let t = self.horizon;
        let mut adv = Vec::with_capacity(self.len());
        let mut ret = Vec::with_capacity(self.len());
        for w in 0..self.workers {
            let r = w * t..(w + 1) * t;
            let (a, g) = gae(
                &rewards[r.clone()],
                &self.values[r.clone()],
                &self.dones[r],
                self.bootstrap[w],
                cfg.gamma,
                cfg.lambda,
            )?;
            adv.extend(a);
            ret.extend(g);
        }
        Ok((adv, ret))
    }

    pub fn ppo_batch(&self, advantages: Vec<f64>, returns: Vec<f64>) -> PpoBatch<'_, f32> {
        PpoBatch {
            obs: self.policy_obs.iter().collect(),
            actions: self.actions.clone(),
            old_log_probs: self.log_probs.clone(),
            advantages,
            returns,
        }
    }

    /// Transitions for generator training; `skip_done` drops steps that
    /// ended an episode.
    pub fn curiosity_transitions(&self, skip_done: bool) -> TransitionRefs<'_> {
        let keep: Vec<usize> = (0..self.curiosity_obs.len())
            .filter(|&i| !(skip_done && self.episode_over[i]))
            .collect();
        TransitionRefs {
            current: keep.iter().map(|&i| &self.curiosity_obs[i]).collect(),
            actions: keep.iter().map(|&i| self.actions[i]).collect(),
            next: keep.iter().map(|&i| &self.curiosity_next[i]).collect(),
        }
    }
}

/// Rollout geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutSpec {
    pub horizon: usize,
    /// Frames per policy input.
    pub policy_frames: usize,
    /// Frames per curiosity input.
    pub curiosity_frames: usize,
}

#[derive(Default)]
struct Lane {
    policy_obs: Vec<Observation>,
    cur: Vec<Observation>,
    next: Vec<Observation>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    ext: Vec<f64>,
    dones: Vec<bool>,
    over: Vec<bool>,
}

/// Runs every worker for `spec.horizon` steps under the current policy,
/// then scores all transitions with `generator`. Steps that end an episode
/// get zero intrinsic reward unless episode ends are hidden from the
/// learner, in which case the stored consecutive inputs are scored as is.
pub fn collect_rollout(
    params: &PolicyParams<f32>,
    workers: &mut [Worker],
    generator: &Generator,
    shaping: &mut RewardShaping,
    spec: RolloutSpec,
    rng: &mut Rng,
) -> Result<RolloutBatch> {
    let nw = workers.len();
    let with_curiosity = !matches!(generator, Generator::None);
    let mut lanes: Vec<Lane> = (0..nw).map(|_| Lane::default()).collect();
    let mut episode_returns = Vec::new();
    let mut episode_successes = Vec::new();
    for _ in 0..spec.horizon {
        let obs: Vec<Observation> = workers.iter().map(|w| w.stacked(spec.policy_frames)).collect();
        let refs: Vec<&Observation> = obs.iter().collect();
        let out = policy_forward_batch(params, &refs)?;
        for ((w, lane), (o, po)) in workers.iter_mut().zip(&mut lanes).zip(obs.into_iter().zip(out)) {
            let action = sample_action(&po.probs, rng.uniform());
            if with_curiosity {
                lane.cur.push(w.stacked(spec.curiosity_frames));
            }
            let step = w.env.step(action)?;
            w.push_frame(step.observation);
            if with_curiosity {
                lane.next.push(w.stacked(spec.curiosity_frames));
            }
            w.episode_return += step.extrinsic_reward;
            if step.info.episode_over {
                episode_returns.push(w.episode_return);
                episode_successes.push(step.info.success);
                w.episode_return = 0.0;
            }
            if step.done {
                let first = w.env.reset_episode();
                w.refill(first);
            }
            lane.policy_obs.push(o);
            lane.actions.push(action);
            lane.log_probs.push(po.log_probs[action]);
            lane.values.push(po.value);
            lane.ext.push(step.extrinsic_reward);
            lane.dones.push(step.done);
            lane.over.push(step.info.episode_over);
        }
    }
    let last: Vec<Observation> = workers.iter().map(|w| w.stacked(spec.policy_frames)).collect();
    let bootstrap = policy_forward_batch(params, &last.iter().collect::<Vec<_>>())?
        .into_iter()
        .map(|o| o.value)
        .collect();

    let mut b = RolloutBatch {
        workers: nw,
        horizon: spec.horizon,
        policy_obs: Vec::new(),
        curiosity_obs: Vec::new(),
        curiosity_next: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        values: Vec::new(),
        ext_rewards: Vec::new(),
        int_rewards: Vec::new(),
        raw_intrinsic: Vec::new(),
        dones: Vec::new(),
        episode_over: Vec::new(),
        bootstrap,
        episode_returns,
        episode_successes,
    };
    for lane in lanes {
        b.policy_obs.extend(lane.policy_obs);
        b.curiosity_obs.extend(lane.cur);
        b.curiosity_next.extend(lane.next);
        b.actions.extend(lane.actions);
        b.log_probs.extend(lane.log_probs);
        b.values.extend(lane.values);
        b.ext_rewards.extend(lane.ext);
        b.dones.extend(lane.dones);
        b.episode_over.extend(lane.over);
    }

    let n = b.len();
    b.raw_intrinsic = vec![0.0; n];
    b.int_rewards = vec![0.0; n];
    if with_curiosity {
        let skip = !shaping.mode.hides_episode_ends();
        let scored: Vec<usize> = (0..n).filter(|&i| !(skip && b.episode_over[i])).collect();
        let t = TransitionRefs {
            current: scored.iter().map(|&i| &b.curiosity_obs[i]).collect(),
            actions: scored.iter().map(|&i| b.actions[i]).collect(),
            next: scored.iter().map(|&i| &b.curiosity_next[i]).collect(),
        };
        let raw = generator.unscaled_rewards(&t)?;
        for (&i, r) in scored.iter().zip(raw) {
            b.raw_intrinsic[i] = r;
            b.int_rewards[i] = shaping.shape(r);
        }
    }
    Ok(b)
}
