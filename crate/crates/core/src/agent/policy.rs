//! Actor-critic network: three stride-2 convolutions, one hidden fully
//! connected layer, an action-logit head and a single value head.

use ficm_numerics::{he_normal, Graph, ParamId, ParamStore, Real, Rng, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::batch::stack;
use crate::error::{config_err, shape_err, Result};

/// Observations are evaluated in chunks of this many samples.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Shape `[C,H,W]` of one (possibly frame-stacked) policy input.
    pub obs_shape: [usize; 3],
    pub num_actions: usize,
    pub conv_widths: [usize; 3],
    pub hidden: usize,
}

impl PolicyConfig {
    pub fn new(obs_shape: [usize; 3], num_actions: usize) -> Self {
        Self {
            obs_shape,
            num_actions,
            conv_widths: [8, 16, 16],
            hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_shape.contains(&0) || self.num_actions == 0 {
            return config_err("policy needs a non-empty observation and action space");
        }
        if self.conv_widths.contains(&0) || self.hidden == 0 {
            return config_err("policy widths must be positive");
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        let ext = |n: usize| (n + 2 - 3) / 2 + 1;
        let (h, w) = (self.obs_shape[1], self.obs_shape[2]);
        let (h, w) = (ext(ext(ext(h))), ext(ext(ext(w))));
        self.conv_widths[2] * h * w
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct PolicyLayout {
    convs: [(ParamId, ParamId); 3],
    hidden: (ParamId, ParamId),
    logits: (ParamId, ParamId),
    value: (ParamId, ParamId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyParams<T: Real> {
    pub config: PolicyConfig,
    pub store: ParamStore<T>,
    layout: PolicyLayout,
}

/// Graph nodes of one forward pass.
pub struct PolicyGraph {
    /// `[N, A]` action logits.
    pub logits: Var,
    /// `[N, A]` row-wise log-probabilities.
    pub log_probs: Var,
    /// `[N, 1]` state values.
    pub value: Var,
}

impl<T: Real> PolicyParams<T> {
    pub fn init(config: PolicyConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut cin = config.obs_shape[0];
        let mut convs = Vec::new();
        for (i, &cout) in config.conv_widths.iter().enumerate() {
            let w = store.add(
                format!("conv{i}.weight"),
                he_normal(rng, &[cout, cin, 3, 3], cin * 9, 1.0),
            );
            let b = store.add(format!("conv{i}.bias"), Tensor::zeros(&[cout]));
            convs.push((w, b));
            cin = cout;
        }
        let flat = config.flat_features();
        let mut linear = |name: &str, fout: usize, fin: usize, gain: f64| {
            let w = store.add(format!("{name}.weight"), he_normal(rng, &[fout, fin], fin, gain));
            let b = store.add(format!("{name}.bias"), Tensor::zeros(&[fout]));
            (w, b)
        };
        let hidden = linear("fc", config.hidden, flat, 1.0);
        // Small policy head keeps the initial action distribution near uniform.
        let logits = linear("pi", config.num_actions, config.hidden, 0.01);
        let value = linear("v", 1, config.hidden, 1.0);
        Ok(Self {
            config,
            store,
            layout: PolicyLayout {
                convs: [convs[0], convs[1], convs[2]],
                hidden,
                logits,
                value,
            },
        })
    }

    pub fn logit_head(&self) -> (ParamId, ParamId) {
        self.layout.logits
    }

    pub fn value_head(&self) -> (ParamId, ParamId) {
        self.layout.value
    }

    /// Builds the forward pass for a `[N,C,H,W]` batch already in `g`.
    pub fn graph(&self, g: &mut Graph<T>, x: Var) -> Result<PolicyGraph> {
        let s = g.shape(x);
        if s.len() != 4 || s[1..] != self.config.obs_shape {
            return shape_err(
                "policy",
                format!("expected [N,{:?}], got {s:?}", self.config.obs_shape),
            );
        }
        let mut h = x;
        for &(w, b) in &self.layout.convs {
            let (wv, bv) = (g.param(&self.store, w)?, g.param(&self.store, b)?);
            h = g.conv2d(h, wv, bv, 2, 1)?;
            h = g.relu(h)?;
        }
        let h = g.flatten(h)?;
        let dense = |g: &mut Graph<T>, x: Var, (w, b): (ParamId, ParamId)| -> Result<Var> {
            let (wv, bv) = (g.param(&self.store, w)?, g.param(&self.store, b)?);
            Ok(g.linear(x, wv, bv)?)
        };
        let h = dense(g, h, self.layout.hidden)?;
        let h = g.relu(h)?;
        let logits = dense(g, h, self.layout.logits)?;
        let value = dense(g, h, self.layout.value)?;
        let log_probs = g.log_softmax(logits)?;
        Ok(PolicyGraph {
            logits,
            log_probs,
            value,
        })
    }
}

/// Softmax of one logit row, accumulated in f64.
pub fn probabilities_from_logits<T: Real>(logits: &[T]) -> Vec<f64> {
    let m = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v.f64() - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Per-observation policy output.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    /// Log-probabilities exactly as the training graph computes them.
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

/// Evaluates a batch of `[C,H,W]` observations without tracking gradients.
pub fn policy_forward_batch<T: Real>(params: &PolicyParams<T>, obs: &[&Tensor<T>]) -> Result<Vec<PolicyOutput>> {
    let a = params.config.num_actions;
    let mut out = Vec::with_capacity(obs.len());
    for chunk in obs.chunks(EVAL_CHUNK) {
        let mut g = Graph::inference();
        let x = g.constant(stack(chunk)?);
        let pg = params.graph(&mut g, x)?;
        let (logits, lp, v) = (g.value(pg.logits), g.value(pg.log_probs), g.value(pg.value));
        for i in 0..chunk.len() {
            let row = &logits.data()[i * a..(i + 1) * a];
            out.push(PolicyOutput {
                logits: row.iter().map(|v| v.f64()).collect(),
                log_probs: lp.data()[i * a..(i + 1) * a].iter().map(|v| v.f64()).collect(),
                probs: probabilities_from_logits(row),
                value: v.data()[i].f64(),
            });
        }
    }
    Ok(out)
}

/// Action probabilities and state value of one observation.
pub fn policy_forward<T: Real>(params: &PolicyParams<T>, obs: &Tensor<T>) -> Result<(Vec<f64>, f64)> {
    let o = policy_forward_batch(params, &[obs])?.remove(0);
    Ok((o.probs, o.value))
}

/// Inverse-CDF draw: the first action whose cumulative probability exceeds
/// `u` in `[0, 1)`. Rounding slack falls to the last action with nonzero
/// probability.
pub fn sample_action(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Most probable action; ties go to the lowest index.
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> PolicyParams<f32> {
        PolicyParams::init(PolicyConfig::new([2, 42, 42], 5), &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn shapes_and_normalisation() {
        let p = params(0);
        let mut rng = Rng::new(1);
        let o = Tensor::from_fn(&[2, 42, 42], |_| rng.uniform() as f32);
        let (probs, v) = policy_forward(&p, &o).unwrap();
        assert_eq!(probs.len(), 5);
        assert!(probs.iter().all(|&q| q > 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(v.is_finite());
        assert!(policy_forward(&p, &Tensor::zeros(&[3, 42, 42])).is_err());
    }

    #[test]
    fn zero_logits_are_uniform() {
        let p = probabilities_from_logits(&[0.0f32; 4]);
        assert!(p.iter().all(|&q| q == 0.25));
    }

    #[test]
    fn zeroed_logit_head_gives_uniform_policy() {
        let mut p = params(2);
        let (w, b) = p.logit_head();
        p.store.get_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        p.store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let (probs, _) = policy_forward(&p, &Tensor::full(&[2, 42, 42], 0.3)).unwrap();
        assert!(probs.iter().all(|&q| (q - 0.2).abs() < 1e-12));
    }

    #[test]
    fn inverse_cdf_and_greedy() {
        let p = [0.1, 0.0, 0.6, 0.3];
        assert_eq!(sample_action(&p, 0.0), 0);
        assert_eq!(sample_action(&p, 0.0999), 0);
        assert_eq!(sample_action(&p, 0.1), 2);
        assert_eq!(sample_action(&p, 0.6999), 2);
        assert_eq!(sample_action(&p, 0.7), 3);
        assert_eq!(sample_action(&[0.5, 0.5 - 1e-12, 0.0], 0.999_999_999_999_9), 1);
        assert_eq!(greedy_action(&[0.3, 0.3, 0.2, 0.2]), 0);
        assert_eq!(greedy_action(&[0.1, 0.4, 0.4, 0.1]), 1);
    }
}
