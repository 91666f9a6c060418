//! Intrinsic reward generators: flow-based curiosity and the next-frame and
//! self-frame prediction baselines, behind one [`Generator`] interface.

mod baselines;
mod ficm;
mod normalizer;

pub use baselines::{BaselineConfig, BaselineKind, BaselineState, Transition};
pub use ficm::{
    error_map, ficm_flows, ficm_flows_batch, ficm_loss, ficm_losses, ficm_reward, ficm_rewards,
    ficm_loss_grad, ficm_train_step, flow_loss_map, losses_from_flows, FicmConfig, FicmState, FlowLoss,
    IntrinsicReward,
};
pub use normalizer::RewardNormalizer;

use ficm_numerics::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Observations and actions of a set of transitions, index-aligned.
pub struct TransitionRefs<'a> {
    pub current: Vec<&'a Tensor<f32>>,
    pub actions: Vec<usize>,
    pub next: Vec<&'a Tensor<f32>>,
}

impl TransitionRefs<'_> {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Generator {
    None,
    Ficm(FicmState<f32>),
    Baseline(BaselineState<f32>),
}

impl Generator {
    /// Novelty per transition before the reward scale is applied: half the
    /// flow loss for FICM, the prediction error for the baselines, zero for
    /// `None`.
    pub fn unscaled_rewards(&self, t: &TransitionRefs<'_>) -> Result<Vec<f64>> {
        match self {
            Generator::None => Ok(vec![0.0; t.len()]),
            Generator::Ficm(s) => {
                let pairs: Vec<_> = t.current.iter().copied().zip(t.next.iter().copied()).collect();
                Ok(ficm_losses(s, &pairs)?.iter().map(|l| 0.5 * l.l_g).collect())
            }
            Generator::Baseline(s) => match s.kind() {
                BaselineKind::Rnd => s.rnd_rewards(&t.next),
                _ => {
                    let batch: Vec<Transition<'_, f32>> = (0..t.len())
                        .map(|i| (t.current[i], t.actions[i], t.next[i]))
                        .collect();
                    s.nextframe_rewards(&batch)
                }
            },
        }
    }

    /// One pass over a random subset of at most `max_samples` transitions
    /// in minibatches of `minibatch`. Returns the mean pre-update loss.
    pub fn train_epoch(
        &mut self,
        t: &TransitionRefs<'_>,
        minibatch: usize,
        max_samples: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        if matches!(self, Generator::None) || t.is_empty() {
            return Ok(0.0);
        }
        let mut idx: Vec<usize> = (0..t.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(max_samples.max(1));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(minibatch.max(1)) {
            let loss = match self {
                Generator::None => unreachable!(),
                Generator::Ficm(s) => {
                    let pairs: Vec<_> = chunk.iter().map(|&i| (t.current[i], t.next[i])).collect();
                    ficm_train_step(s, &pairs)?
                }
                Generator::Baseline(s) => match s.kind() {
                    BaselineKind::Rnd => {
                        let obs: Vec<_> = chunk.iter().map(|&i| t.next[i]).collect();
                        s.rnd_train_step(&obs)?
                    }
                    _ => {
                        let batch: Vec<Transition<'_, f32>> = chunk
                            .iter()
                            .map(|&i| (t.current[i], t.actions[i], t.next[i]))
                            .collect();
                        let (f, inv) = s.nextframe_train_step(&batch)?;
                        f + inv
                    }
                },
            };
            total += loss;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    pub fn ficm(&self) -> Option<&FicmState<f32>> {
        match self {
            Generator::Ficm(s) => Some(s),
            _ => None,
        }
    }

    pub fn baseline(&self) -> Option<&BaselineState<f32>> {
        match self {
            Generator::Baseline(s) => Some(s),
            _ => None,
        }
    }
}
