use ficm_numerics::{AdamState, Graph, Real, Rng, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::batch::{per_sample_mse, stack, unstack};
use crate::error::{config_err, shape_err, Error, Result};
use crate::flowpredictor::{flow_graph, warp_graph, FlowField, PredictorConfig, PredictorParams};

/// Pairs evaluated per graph when scoring large batches.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FicmConfig {
    pub predictor: PredictorConfig,
    /// Flow scaling factor applied before warping.
    pub beta: f64,
    /// Reward scaling factor.
    pub zeta: f64,
    pub lr: f64,
}

impl FicmConfig {
    pub fn new(predictor: PredictorConfig) -> Self {
        Self {
            predictor,
            beta: 0.5,
            zeta: 1.0,
            lr: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return config_err(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return config_err(format!("zeta must be positive, got {}", self.zeta));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return config_err(format!("learning rate must be >= 0, got {}", self.lr));
        }
        Ok(())
    }
}

/// Flow predictor weights, optimizer and scaling factors. One parameter set
/// serves both flow directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FicmState<T: Real> {
    pub config: FicmConfig,
    pub params: PredictorParams<T>,
    pub adam: AdamState<T>,
    pub updates: u64,
}

/// Reconstruction losses of one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowLoss {
    /// `mse(o_t1, warp(o_t, F_backward))`.
    pub l_f: f64,
    /// `mse(o_t, warp(o_t1, F_forward))`.
    pub l_b: f64,
    pub l_g: f64,
}

impl FlowLoss {
    fn new(l_f: f64, l_b: f64) -> Self {
        Self {
            l_f,
            l_b,
            l_g: l_f + l_b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReward {
    pub r_f: f64,
    pub r_b: f64,
    pub r_i: f64,
}

impl IntrinsicReward {
    /// Scales each loss by `zeta / 2`.
    pub fn from_loss(loss: &FlowLoss, zeta: f64) -> Self {
        let half = zeta / 2.0;
        Self {
            r_f: half * loss.l_f,
            r_b: half * loss.l_b,
            r_i: half * loss.l_g,
        }
    }
}

impl<T: Real> FicmState<T> {
    pub fn new(config: FicmConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = PredictorParams::init(&config.predictor, rng)?;
        let adam = AdamState::new(&params.store, config.lr);
        Ok(Self {
            config,
            params,
            adam,
            updates: 0,
        })
    }

    pub fn cast<U: Real>(&self) -> FicmState<U> {
        let params = self.params.cast::<U>();
        let mut adam = AdamState::new(&params.store, self.config.lr);
        adam.lr = U::c(self.adam.lr.f64());
        FicmState {
            config: self.config.clone(),
            params,
            adam,
            updates: self.updates,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
        self.adam.lr = T::c(lr);
    }
}

struct PairGraph {
    o_t: Var,
    o_t1: Var,
    hat_t: Var,
    hat_t1: Var,
    fwd: Var,
    bwd: Var,
}

/// Records flows in both directions and both reconstructions. `o_t` and
/// `o_t1` share a shape, `[C,H,W]` or `[N,C,H,W]`.
fn pair_graph<T: Real>(
    g: &mut Graph<T>,
    state: &FicmState<T>,
    o_t: Tensor<T>,
    o_t1: Tensor<T>,
) -> Result<PairGraph> {
    let cfg = &state.config;
    let (a, b) = (g.constant(o_t), g.constant(o_t1));
    let (fwd, bwd) = flow_graph(g, &state.params, &cfg.predictor, a, b, true)?;
    let bwd = bwd.expect("both directions requested");
    let hat_t = warp_graph(g, b, fwd, cfg.beta)?;
    let hat_t1 = warp_graph(g, a, bwd, cfg.beta)?;
    Ok(PairGraph {
        o_t: a,
        o_t1: b,
        hat_t,
        hat_t1,
        fwd,
        bwd,
    })
}

fn check_pair<T: Real>(o_t: &Tensor<T>, o_t1: &Tensor<T>) -> Result<()> {
    if o_t.shape() != o_t1.shape() || o_t.rank() != 3 {
        return shape_err(
            "ficm",
            format!("pair shapes {:?} and {:?}", o_t.shape(), o_t1.shape()),
        );
    }
    Ok(())
}

/// `(G(o_t, o_t1), G(o_t1, o_t))` with the same parameters.
pub fn ficm_flows<T: Real>(
    state: &FicmState<T>,
    o_t: &Tensor<T>,
    o_t1: &Tensor<T>,
) -> Result<(FlowField<T>, FlowField<T>)> {
    check_pair(o_t, o_t1)?;
    let mut g = Graph::inference();
    let p = pair_graph(&mut g, state, o_t.clone(), o_t1.clone())?;
    Ok((
        FlowField(g.value(p.fwd).clone()),
        FlowField(g.value(p.bwd).clone()),
    ))
}

/// Losses for given flows: `o_t` is reconstructed from `o_t1` with the
/// forward flow and `o_t1` from `o_t` with the backward flow.
pub fn losses_from_flows<T: Real>(
    o_t: &Tensor<T>,
    o_t1: &Tensor<T>,
    forward: &FlowField<T>,
    backward: &FlowField<T>,
    beta: f64,
) -> Result<FlowLoss> {
    check_pair(o_t, o_t1)?;
    let hat_t = crate::flowpredictor::warp(o_t1, forward, beta)?;
    let hat_t1 = crate::flowpredictor::warp(o_t, backward, beta)?;
    let l_f = per_sample_mse(o_t1.data(), hat_t1.data(), 1)[0];
    let l_b = per_sample_mse(o_t.data(), hat_t.data(), 1)[0];
    Ok(FlowLoss::new(l_f, l_b))
}

/// Losses for a batch of `(o_t, o_t1)` pairs, evaluated in chunks.
pub fn ficm_losses<T: Real>(
    state: &FicmState<T>,
    pairs: &[(&Tensor<T>, &Tensor<T>)],
) -> Result<Vec<FlowLoss>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_CHUNK) {
        for (a, b) in chunk {
            check_pair(a, b)?;
        }
        let a = stack(&chunk.iter().map(|p| p.0).collect::<Vec<_>>())?;
        let b = stack(&chunk.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let mut g = Graph::inference();
        let p = pair_graph(&mut g, state, a, b)?;
        let n = chunk.len();
        let l_f = per_sample_mse(g.value(p.o_t1).data(), g.value(p.hat_t1).data(), n);
        let l_b = per_sample_mse(g.value(p.o_t).data(), g.value(p.hat_t).data(), n);
        out.extend(l_f.into_iter().zip(l_b).map(|(f, b)| FlowLoss::new(f, b)));
    }
    Ok(out)
}

pub fn ficm_loss<T: Real>(state: &FicmState<T>, o_t: &Tensor<T>, o_t1: &Tensor<T>) -> Result<FlowLoss> {
    Ok(ficm_losses(state, &[(o_t, o_t1)])?[0])
}

/// Intrinsic reward of one transition. Reads only the predictor and the two
/// observations.
pub fn ficm_reward<T: Real>(
    state: &FicmState<T>,
    o_t: &Tensor<T>,
    o_t1: &Tensor<T>,
) -> Result<IntrinsicReward> {
    let loss = ficm_loss(state, o_t, o_t1)?;
    Ok(IntrinsicReward::from_loss(&loss, state.config.zeta))
}

pub fn ficm_rewards<T: Real>(
    state: &FicmState<T>,
    pairs: &[(&Tensor<T>, &Tensor<T>)],
) -> Result<Vec<IntrinsicReward>> {
    Ok(ficm_losses(state, pairs)?
        .iter()
        .map(|l| IntrinsicReward::from_loss(l, state.config.zeta))
        .collect())
}

/// Batch-mean flow loss with its parameter gradients left in the
/// predictor's store (previous gradients are cleared first).
pub fn ficm_loss_grad<T: Real>(state: &mut FicmState<T>, pairs: &[(&Tensor<T>, &Tensor<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    for (a, b) in pairs {
        check_pair(a, b)?;
    }
    let a = stack(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let b = stack(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let mut g = Graph::new();
    let p = pair_graph(&mut g, state, a, b)?;
    let l_f = g.mse(p.o_t1, p.hat_t1)?;
    let l_b = g.mse(p.o_t, p.hat_t)?;
    let l_g = g.add(l_f, l_b)?;
    let loss = g.value(l_g).item().f64();
    state.params.store.zero_grad();
    g.backward_into(l_g, &mut state.params.store)?;
    Ok(loss)
}

/// One Adam step on the batch-mean flow loss. Returns the mean loss before
/// the update.
pub fn ficm_train_step<T: Real>(
    state: &mut FicmState<T>,
    pairs: &[(&Tensor<T>, &Tensor<T>)],
) -> Result<f64> {
    let before = ficm_loss_grad(state, pairs)?;
    state.adam.step(&mut state.params.store)?;
    state.updates += 1;
    Ok(before)
}

/// Per-pixel squared reconstruction error summed over channels and both
/// directions, `[H,W]` row-major.
pub fn flow_loss_map<T: Real>(state: &FicmState<T>, o_t: &Tensor<T>, o_t1: &Tensor<T>) -> Result<Vec<f64>> {
    check_pair(o_t, o_t1)?;
    let mut g = Graph::inference();
    let p = pair_graph(&mut g, state, o_t.clone(), o_t1.clone())?;
    Ok(error_map(
        o_t,
        o_t1,
        g.value(p.hat_t),
        g.value(p.hat_t1),
    ))
}

/// `sum_c (o_t - hat_t)^2 + (o_t1 - hat_t1)^2` per pixel.
pub fn error_map<T: Real>(o_t: &Tensor<T>, o_t1: &Tensor<T>, hat_t: &Tensor<T>, hat_t1: &Tensor<T>) -> Vec<f64> {
    let s = o_t.shape();
    let plane = s[1] * s[2];
    let mut out = vec![0.0; plane];
    for c in 0..s[0] {
        for (p, o) in out.iter_mut().enumerate() {
            let i = c * plane + p;
            let d0 = o_t.data()[i].f64() - hat_t.data()[i].f64();
            let d1 = o_t1.data()[i].f64() - hat_t1.data()[i].f64();
            *o += d0 * d0 + d1 * d1;
        }
    }
    out
}

/// Forward and backward flows for a batch, one `[2,H,W]` field per pair.
pub fn ficm_flows_batch<T: Real>(
    state: &FicmState<T>,
    pairs: &[(&Tensor<T>, &Tensor<T>)],
) -> Result<Vec<(FlowField<T>, FlowField<T>)>> {
    let a = stack(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let b = stack(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let mut g = Graph::inference();
    let p = pair_graph(&mut g, state, a, b)?;
    Ok(unstack(g.value(p.fwd))
        .into_iter()
        .zip(unstack(g.value(p.bwd)))
        .map(|(f, b)| (FlowField(f), FlowField(b)))
        .collect())
}
