//! Clipped-surrogate policy optimisation with generalized advantage
//! estimation.

use ficm_numerics::{AdamState, Graph, Real, Rng, Tensor};
use serde::{Deserialize, Serialize};

use super::policy::PolicyParams;
use crate::batch::stack;
use crate::error::{config_err, shape_err, Error, Result};

const ADV_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    /// Steps collected per worker between updates.
    pub rollout_len: usize,
    pub workers: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Consecutive frames stacked into one policy input.
    pub frame_stack: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 256,
            value_coef: 0.5,
            entropy_coef: 0.01,
            lr: 2.5e-4,
            rollout_len: 128,
            workers: 8,
            max_grad_norm: 0.5,
            frame_stack: 2,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return config_err("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return config_err("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return config_err("clip must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_len == 0 || self.workers == 0 {
            return config_err("epochs, minibatch, rollout_len and workers must be positive");
        }
        if self.frame_stack == 0 {
            return config_err("frame_stack must be positive");
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if ![self.value_coef, self.entropy_coef, self.lr, self.max_grad_norm]
            .into_iter()
            .all(finite_nonneg)
        {
            return config_err("coefficients, lr and max_grad_norm must be finite and >= 0");
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.rollout_len * self.workers
    }
}

/// Reward fed to the learner.
pub fn combine_rewards(ext: f64, intr: f64) -> f64 {
    ext + intr
}

/// Advantages and returns for one worker's trajectory. `dones[t]` cuts the
/// bootstrap from `t + 1`; `bootstrap` is the value after the last step.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return shape_err(
            "gae",
            format!("rewards {n}, values {}, dones {}", values.len(), dones.len()),
        );
    }
    let mut adv = vec![0.0; n];
    let mut last = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 == n { bootstrap } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next * live - values[t];
        last = delta + gamma * lambda * live * last;
        adv[t] = last;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shifts and scales to mean 0 and standard deviation 1 (population).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + ADV_EPS));
}

/// Training samples for one update, index-aligned.
pub struct PpoBatch<'a, T: Real> {
    pub obs: Vec<&'a Tensor<T>>,
    pub actions: Vec<usize>,
    /// Behaviour-policy log-probabilities of `actions`.
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl<T: Real> PpoBatch<'_, T> {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty PPO batch".into()));
        }
        if [
            self.actions.len(),
            self.old_log_probs.len(),
            self.advantages.len(),
            self.returns.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return shape_err("ppo_update", "batch fields have different lengths");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MinibatchStats {
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub policy_loss: f64,
}

/// Diagnostics of one update: means over all minibatches plus the
/// per-minibatch series in the order they ran.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub minibatches: Vec<MinibatchStats>,
}

/// Loss of one minibatch, built into `g`. Returns the scalar loss node and
/// statistics of the current parameters.
fn minibatch_loss<T: Real>(
    g: &mut Graph<T>,
    params: &PolicyParams<T>,
    batch: &PpoBatch<'_, T>,
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<(ficm_numerics::Var, MinibatchStats)> {
    let m = idx.len();
    let a = params.config.num_actions;
    let obs: Vec<&Tensor<T>> = idx.iter().map(|&i| batch.obs[i]).collect();
    let x = g.constant(stack(&obs)?);
    let pg = params.graph(g, x)?;
    let acts: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
    let logp = g.gather(pg.log_probs, &acts)?;
    let old = g.constant(Tensor::new(
        &[m],
        idx.iter().map(|&i| T::c(batch.old_log_probs[i])).collect(),
    )?);
    let adv = g.constant(Tensor::new(
        &[m],
        idx.iter().map(|&i| T::c(batch.advantages[i])).collect(),
    )?);
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let surr1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, T::c(1.0 - cfg.clip), T::c(1.0 + cfg.clip));
    let surr2 = g.mul(clipped, adv)?;
    let surr = g.minimum(surr1, surr2)?;
    let surr = g.mean(surr);
    let policy_loss = g.neg(surr);

    let ret = g.constant(Tensor::new(
        &[m, 1],
        idx.iter().map(|&i| T::c(batch.returns[i])).collect(),
    )?);
    let value_loss = g.mse(pg.value, ret)?;

    let p = g.exp(pg.log_probs);
    let plogp = g.mul(p, pg.log_probs)?;
    let neg_ent = g.sum(plogp);
    let neg_ent = g.scale(neg_ent, T::c(1.0 / m as f64));

    let vl = g.scale(value_loss, T::c(cfg.value_coef));
    let el = g.scale(neg_ent, T::c(cfg.entropy_coef));
    let loss = g.add(policy_loss, vl)?;
    let loss = g.add(loss, el)?;

    let ratios = g.value(ratio).data();
    let mean_ratio = ratios.iter().map(|r| r.f64()).sum::<f64>() / m as f64;
    let clip_frac = ratios
        .iter()
        .filter(|r| (r.f64() - 1.0).abs() > cfg.clip)
        .count() as f64
        / m as f64;
    debug_assert_eq!(g.shape(pg.log_probs), [m, a]);
    let stats = MinibatchStats {
        mean_ratio,
        clip_frac,
        value_loss: g.value(value_loss).item().f64(),
        entropy: -g.value(neg_ent).item().f64(),
        policy_loss: g.value(policy_loss).item().f64(),
    };
    Ok((loss, stats))
}

/// `cfg.epochs` passes of shuffled minibatches over `batch`, one Adam step
/// per minibatch. Advantages are used as given.
pub fn ppo_update<T: Real>(
    params: &mut PolicyParams<T>,
    adam: &mut AdamState<T>,
    batch: &PpoBatch<'_, T>,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<PpoDiagnostics> {
    cfg.validate()?;
    batch.check()?;
    adam.lr = T::c(cfg.lr);
    let mut diag = PpoDiagnostics::default();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.minibatch) {
            let mut g = Graph::new();
            let (loss, stats) = minibatch_loss(&mut g, params, batch, idx, cfg)?;
            params.store.zero_grad();
            g.backward_into(loss, &mut params.store)?;
            if cfg.max_grad_norm > 0.0 {
                params.store.clip_grad_norm(T::c(cfg.max_grad_norm));
            }
            adam.step(&mut params.store)?;
            diag.minibatches.push(stats);
        }
    }
    let k = diag.minibatches.len() as f64;
    let avg = |f: fn(&MinibatchStats) -> f64| diag.minibatches.iter().map(f).sum::<f64>() / k;
    diag.mean_ratio = avg(|s| s.mean_ratio);
    diag.clip_frac = avg(|s| s.clip_frac);
    diag.value_loss = avg(|s| s.value_loss);
    diag.entropy = avg(|s| s.entropy);
    Ok(diag)
}

/// Loss of the whole batch under the current parameters, for gradient
/// checks.
pub fn ppo_loss<T: Real>(
    params: &PolicyParams<T>,
    batch: &PpoBatch<'_, T>,
    cfg: &PpoConfig,
) -> Result<(f64, MinibatchStats)> {
    batch.check()?;
    let mut g = Graph::inference();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (loss, stats) = minibatch_loss(&mut g, params, batch, &idx, cfg)?;
    Ok((g.value(loss).item().f64(), stats))
}

/// Gradient of [`ppo_loss`] with respect to every parameter, flattened in
/// store order.
pub fn ppo_loss_grad<T: Real>(
    params: &PolicyParams<T>,
    batch: &PpoBatch<'_, T>,
    cfg: &PpoConfig,
) -> Result<Vec<f64>> {
    batch.check()?;
    let mut local = params.clone();
    local.store.zero_grad();
    let mut g = Graph::new();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (loss, _) = minibatch_loss(&mut g, &local, batch, &idx, cfg)?;
    g.backward_into(loss, &mut local.store)?;
    Ok(local
        .store
        .tensors()
        .iter()
        .flat_map(|t| t.grad().expect("zeroed").iter().map(|v| v.f64()).collect::<Vec<_>>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_limit() {
        let r = [0.5, -1.0, 2.0, 0.0];
        let v = [0.1, 0.2, -0.3, 0.4];
        let d = [false, true, false, false];
        let (adv, ret) = gae(&r, &v, &d, 0.7, 0.9, 0.0).unwrap();
        let next = [0.2, -0.3, 0.4, 0.7];
        for t in 0..4 {
            let live = if d[t] { 0.0 } else { 1.0 };
            assert_eq!(adv[t], r[t] + 0.9 * next[t] * live - v[t]);
            assert_eq!(ret[t], adv[t] + v[t]);
        }
    }

    #[test]
    fn hand_unrolled_three_steps() {
        let (g, l) = (0.9, 0.95);
        let (adv, _) = gae(&[0.0, 0.0, 1.0], &[0.1, 0.2, 0.3], &[false; 3], 0.0, g, l).unwrap();
        let d2 = 1.0 - 0.3;
        let d1 = 0.0 + g * 0.3 - 0.2;
        let d0 = 0.0 + g * 0.2 - 0.1;
        let a2 = d2;
        let a1 = d1 + g * l * a2;
        let a0 = d0 + g * l * a1;
        for (x, y) in adv.iter().zip([a0, a1, a2]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn null_signal_and_length_mismatch() {
        let (adv, _) = gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
        assert!(gae(&[0.0; 3], &[0.0; 2], &[false; 3], 0.0, 0.99, 0.95).is_err());
    }

    #[test]
    fn combine() {
        assert_eq!(combine_rewards(0.0, 0.3), 0.3);
        assert_eq!(combine_rewards(0.4, 0.0), 0.4);
        assert_eq!(combine_rewards(1.0, 0.25), 1.25);
    }

    #[test]
    fn config_bounds() {
        assert!(PpoConfig::default().validate().is_ok());
        for f in [
            |c: &mut PpoConfig| c.gamma = 0.0,
            |c: &mut PpoConfig| c.gamma = 1.01,
            |c: &mut PpoConfig| c.lambda = -0.1,
            |c: &mut PpoConfig| c.clip = 0.0,
            |c: &mut PpoConfig| c.minibatch = 0,
        ] {
            let mut c = PpoConfig::default();
            f(&mut c);
            assert!(c.validate().is_err());
        }
    }
}
