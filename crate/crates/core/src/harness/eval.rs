//! Episode-level evaluation of a trained policy and of the uniform-random
//! reference policy.

use ficm_numerics::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{policy_forward_batch, sample_action, PolicyParams, Worker};
use crate::envs::{action_space, EnvConfig};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

fn report(returns: &[f64], successes: usize) -> EvalReport {
    let n = returns.len();
    EvalReport {
        episodes: n,
        success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        mean_return: if n == 0 { 0.0 } else { returns.iter().sum::<f64>() / n as f64 },
    }
}

/// Runs `episodes` full episodes side by side, sampling actions from the
/// policy.
pub fn evaluate_policy(
    params: &PolicyParams<f32>,
    env: &EnvConfig,
    frame_stack: usize,
    episodes: usize,
    rng: &mut Rng,
) -> Result<EvalReport> {
    let mut cfg = env.clone();
    cfg.auto_reset = false;
    let mut workers: Vec<Worker> = (0..episodes)
        .map(|_| Worker::new(&cfg, frame_stack))
        .collect::<Result<_>>()?;
    let mut returns = vec![0.0; episodes];
    let mut live: Vec<usize> = (0..episodes).collect();
    let mut successes = 0;
    while !live.is_empty() {
        let obs: Vec<_> = live.iter().map(|&i| workers[i].stacked(frame_stack)).collect();
        let out = policy_forward_batch(params, &obs.iter().collect::<Vec<_>>())?;
        let mut still = Vec::with_capacity(live.len());
        for (&i, po) in live.iter().zip(out) {
            let a = sample_action(&po.probs, rng.uniform());
            let w = &mut workers[i];
            let step = w.env.step(a)?;
            returns[i] += step.extrinsic_reward;
            w.push_frame(step.observation);
            if step.done {
                successes += usize::from(step.info.success);
            } else {
                still.push(i);
            }
        }
        live = still;
    }
    Ok(report(&returns, successes))
}

/// Uniform-random actions for `episodes` episodes.
pub fn uniform_policy_eval(env: &EnvConfig, episodes: usize, rng: &mut Rng) -> Result<EvalReport> {
    let mut cfg = env.clone();
    cfg.auto_reset = false;
    let a = action_space(&cfg);
    let (mut e, _) = crate::envs::reset(&cfg)?;
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0;
    for _ in 0..episodes {
        e.reset_episode();
        let mut ret = 0.0;
        loop {
            let s = e.step(rng.below(a))?;
            ret += s.extrinsic_reward;
            if s.done {
                successes += usize::from(s.info.success);
                break;
            }
        }
        returns.push(ret);
    }
    Ok(report(&returns, successes))
}
