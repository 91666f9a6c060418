//! Next-frame prediction (random or inverse-dynamics features) and
//! self-frame prediction (fixed random target plus trained predictor).

use ficm_numerics::{he_normal, AdamState, Graph, ParamId, ParamStore, Real, Rng, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::batch::{per_sample_mse, stack};
use crate::error::{config_err, shape_err, Error, Result};

const EVAL_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Forward model on a frozen random embedding.
    Rf,
    /// Forward model on an embedding trained by an inverse model.
    Idf,
    /// Predictor regressing a frozen random network on single frames.
    Rnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Observation shape `[C,H,W]`.
    pub obs_shape: [usize; 3],
    pub num_actions: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, obs_shape: [usize; 3], num_actions: usize) -> Self {
        Self {
            kind,
            obs_shape,
            num_actions,
            embed_dim: 64,
            hidden: 128,
            lr: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_shape.contains(&0) || self.num_actions == 0 {
            return config_err("baseline needs a non-empty observation and action space");
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return config_err("baseline widths must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return config_err("baseline learning rate must be >= 0");
        }
        Ok(())
    }
}

const ENCODER_WIDTHS: [usize; 3] = [16, 32, 32];

fn out_extent(n: usize) -> usize {
    (n + 2 - 3) / 2 + 1
}

/// Three stride-2 convolutions and a linear projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderIds {
    convs: [(ParamId, ParamId); 3],
    proj: (ParamId, ParamId),
}

fn add_encoder<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, cfg: &BaselineConfig) -> EncoderIds {
    let [c, mut h, mut w] = cfg.obs_shape;
    let mut cin = c;
    let mut convs = Vec::new();
    for (i, &cout) in ENCODER_WIDTHS.iter().enumerate() {
        let wt = store.add(
            format!("enc.conv{i}.weight"),
            he_normal(rng, &[cout, cin, 3, 3], cin * 9, 1.0),
        );
        let b = store.add(format!("enc.conv{i}.bias"), Tensor::zeros(&[cout]));
        convs.push((wt, b));
        cin = cout;
        h = out_extent(h);
        w = out_extent(w);
    }
    let flat = cin * h * w;
    let pw = store.add(
        "enc.proj.weight",
        he_normal(rng, &[cfg.embed_dim, flat], flat, 1.0),
    );
    let pb = store.add("enc.proj.bias", Tensor::zeros(&[cfg.embed_dim]));
    EncoderIds {
        convs: [convs[0], convs[1], convs[2]],
        proj: (pw, pb),
    }
}

fn add_linear<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut Rng,
    name: &str,
    fout: usize,
    fin: usize,
) -> (ParamId, ParamId) {
    let w = store.add(format!("{name}.weight"), he_normal(rng, &[fout, fin], fin, 1.0));
    let b = store.add(format!("{name}.bias"), Tensor::zeros(&[fout]));
    (w, b)
}

fn encode<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, ids: &EncoderIds, x: Var) -> Result<Var> {
    let mut h = x;
    for &(w, b) in &ids.convs {
        let (wv, bv) = (g.param(store, w)?, g.param(store, b)?);
        h = g.conv2d(h, wv, bv, 2, 1)?;
        h = g.leaky_relu(h, 0.0)?;
    }
    let h = g.flatten(h)?;
    let (w, b) = (g.param(store, ids.proj.0)?, g.param(store, ids.proj.1)?);
    Ok(g.linear(h, w, b)?)
}

fn mlp<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layers: &[(ParamId, ParamId); 2],
    x: Var,
) -> Result<Var> {
    let (w, b) = (g.param(store, layers[0].0)?, g.param(store, layers[0].1)?);
    let h = g.linear(x, w, b)?;
    let h = g.leaky_relu(h, 0.0)?;
    let (w, b) = (g.param(store, layers[1].0)?, g.param(store, layers[1].1)?);
    Ok(g.linear(h, w, b)?)
}

fn one_hot<T: Real>(actions: &[usize], n: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[actions.len(), n]);
    for (i, &a) in actions.iter().enumerate() {
        t.data_mut()[i * n + a] = T::one();
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layout {
    /// Encoder inside `model` (IDF) or `frozen` (RF, and the RND target).
    encoder: EncoderIds,
    /// Forward model (RF, IDF).
    forward: Option<[(ParamId, ParamId); 2]>,
    /// Inverse head (IDF).
    inverse: Option<[(ParamId, ParamId); 2]>,
    /// Encoder of the RND predictor inside `model`.
    predictor: Option<EncoderIds>,
}

/// Parameters of one baseline. `frozen` holds the networks that never
/// change (RF embedding, RND target); `model` holds everything trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BaselineState<T: Real> {
    pub config: BaselineConfig,
    pub frozen: ParamStore<T>,
    pub model: ParamStore<T>,
    pub adam: AdamState<T>,
    layout: Layout,
    pub updates: u64,
}

/// One `(o_t, a_t, o_t1)` transition.
pub type Transition<'a, T> = (&'a Tensor<T>, usize, &'a Tensor<T>);

impl<T: Real> BaselineState<T> {
    pub fn new(config: BaselineConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut frozen = ParamStore::new();
        let mut model = ParamStore::new();
        let (e, a, hdn) = (config.embed_dim, config.num_actions, config.hidden);
        let layout = match config.kind {
            BaselineKind::Rf => {
                let encoder = add_encoder(&mut frozen, rng, &config);
                let forward = [
                    add_linear(&mut model, rng, "fwd.fc0", hdn, e + a),
                    add_linear(&mut model, rng, "fwd.fc1", e, hdn),
                ];
                Layout {
                    encoder,
                    forward: Some(forward),
                    inverse: None,
                    predictor: None,
                }
            }
            BaselineKind::Idf => {
                let encoder = add_encoder(&mut model, rng, &config);
                let forward = [
                    add_linear(&mut model, rng, "fwd.fc0", hdn, e + a),
                    add_linear(&mut model, rng, "fwd.fc1", e, hdn),
                ];
                let inverse = [
                    add_linear(&mut model, rng, "inv.fc0", hdn, 2 * e),
                    add_linear(&mut model, rng, "inv.fc1", a, hdn),
                ];
                Layout {
                    encoder,
                    forward: Some(forward),
                    inverse: Some(inverse),
                    predictor: None,
                }
            }
            BaselineKind::Rnd => {
                let encoder = add_encoder(&mut frozen, rng, &config);
                let predictor = add_encoder(&mut model, rng, &config);
                Layout {
                    encoder,
                    forward: None,
                    inverse: None,
                    predictor: Some(predictor),
                }
            }
        };
        let adam = AdamState::new(&model, config.lr);
        Ok(Self {
            config,
            frozen,
            model,
            adam,
            layout,
            updates: 0,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.config.kind
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
        self.adam.lr = T::c(lr);
    }

    /// Checksum of the parameters that must stay fixed: the RF embedding or
    /// the RND target. IDF has none and returns the empty-store hash.
    pub fn frozen_checksum(&self) -> u64 {
        self.frozen.checksum()
    }

    /// Checksum of the embedding that feeds the forward model.
    pub fn embedding_checksum(&self) -> u64 {
        match self.config.kind {
            BaselineKind::Idf => {
                let mut sub = ParamStore::<T>::new();
                for &(w, b) in &self.layout.encoder.convs {
                    sub.add(self.model.name(w), self.model.get(w).clone());
                    sub.add(self.model.name(b), self.model.get(b).clone());
                }
                sub.checksum()
            }
            _ => self.frozen.checksum(),
        }
    }

    fn check_obs(&self, o: &Tensor<T>) -> Result<()> {
        if o.shape() != self.config.obs_shape {
            return shape_err(
                "baseline",
                format!("expected {:?}, got {:?}", self.config.obs_shape, o.shape()),
            );
        }
        Ok(())
    }

    fn check_transitions(&self, batch: &[Transition<'_, T>]) -> Result<()> {
        for (a, act, b) in batch {
            self.check_obs(a)?;
            self.check_obs(b)?;
            if *act >= self.config.num_actions {
                return Err(Error::InvalidInput(format!("action {act} out of range")));
            }
        }
        Ok(())
    }

    /// Frozen-encoder embeddings, evaluated outside any training graph.
    fn frozen_embed(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let e = encode(&mut g, &self.frozen, &self.layout.encoder, xv)?;
        Ok(g.value(e).clone())
    }

    fn require(&self, ok: bool, what: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::WrongKind(format!("{what} is not defined for {:?}", self.config.kind)))
        }
    }

    /// Forward-model prediction error per transition.
    pub fn nextframe_rewards(&self, batch: &[Transition<'_, T>]) -> Result<Vec<f64>> {
        self.require(self.config.kind != BaselineKind::Rnd, "nextframe_reward")?;
        self.check_transitions(batch)?;
        let fwd = self.layout.forward.as_ref().expect("forward model");
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(EVAL_CHUNK) {
            let xa = stack(&chunk.iter().map(|t| t.0).collect::<Vec<_>>())?;
            let xb = stack(&chunk.iter().map(|t| t.2).collect::<Vec<_>>())?;
            let acts: Vec<usize> = chunk.iter().map(|t| t.1).collect();
            let mut g = Graph::inference();
            let (phi_a, phi_b) = match self.config.kind {
                BaselineKind::Rf => {
                    let pa = self.frozen_embed(xa)?;
                    let pb = self.frozen_embed(xb)?;
                    (g.constant(pa), g.constant(pb))
                }
                _ => {
                    let (va, vb) = (g.constant(xa), g.constant(xb));
                    (
                        encode(&mut g, &self.model, &self.layout.encoder, va)?,
                        encode(&mut g, &self.model, &self.layout.encoder, vb)?,
                    )
                }
            };
            let oh = g.constant(one_hot(&acts, self.config.num_actions));
            let inp = g.concat(&[phi_a, oh], 1)?;
            let pred = mlp(&mut g, &self.model, fwd, inp)?;
            out.extend(per_sample_mse(
                g.value(pred).data(),
                g.value(phi_b).data(),
                chunk.len(),
            ));
        }
        Ok(out)
    }

    pub fn nextframe_reward(&self, o_t: &Tensor<T>, a_t: usize, o_t1: &Tensor<T>) -> Result<f64> {
        Ok(self.nextframe_rewards(&[(o_t, a_t, o_t1)])?[0])
    }

    /// One Adam step. RF trains the forward model only. IDF adds the
    /// inverse-model cross-entropy, which is the only term that reaches the
    /// embedding (the forward model sees detached features). Returns
    /// `(forward_mse, inverse_ce)` before the update.
    pub fn nextframe_train_step(&mut self, batch: &[Transition<'_, T>]) -> Result<(f64, f64)> {
        self.require(self.config.kind != BaselineKind::Rnd, "nextframe_train_step")?;
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        self.check_transitions(batch)?;
        let xa = stack(&batch.iter().map(|t| t.0).collect::<Vec<_>>())?;
        let xb = stack(&batch.iter().map(|t| t.2).collect::<Vec<_>>())?;
        let acts: Vec<usize> = batch.iter().map(|t| t.1).collect();
        let fwd = *self.layout.forward.as_ref().expect("forward model");
        let mut g = Graph::new();
        let (fwd_in_a, target_b, inverse_ce) = match self.config.kind {
            BaselineKind::Rf => {
                let pa = self.frozen_embed(xa)?;
                let pb = self.frozen_embed(xb)?;
                (g.constant(pa), g.constant(pb), None)
            }
            _ => {
                let (va, vb) = (g.constant(xa), g.constant(xb));
                let pa = encode(&mut g, &self.model, &self.layout.encoder, va)?;
                let pb = encode(&mut g, &self.model, &self.layout.encoder, vb)?;
                let inv = self.layout.inverse.as_ref().expect("inverse head");
                let cat = g.concat(&[pa, pb], 1)?;
                let logits = mlp(&mut g, &self.model, inv, cat)?;
                let logp = g.log_softmax(logits)?;
                let picked = g.gather(logp, &acts)?;
                let nll = g.mean(picked);
                let ce = g.neg(nll);
                let (va, vb) = (g.value(pa).clone(), g.value(pb).clone());
                let (da, db) = (g.constant(va), g.constant(vb));
                (da, db, Some(ce))
            }
        };
        let oh = g.constant(one_hot(&acts, self.config.num_actions));
        let inp = g.concat(&[fwd_in_a, oh], 1)?;
        let pred = mlp(&mut g, &self.model, &fwd, inp)?;
        let fmse = g.mse(pred, target_b)?;
        let fwd_loss = g.value(fmse).item().f64();
        let (loss, ce_val) = match inverse_ce {
            Some(ce) => {
                let v = g.value(ce).item().f64();
                (g.add(fmse, ce)?, v)
            }
            None => (fmse, 0.0),
        };
        g.backward_into(loss, &mut self.model)?;
        self.adam.step(&mut self.model)?;
        self.updates += 1;
        Ok((fwd_loss, ce_val))
    }

    /// Predictor-vs-target error per observation.
    pub fn rnd_rewards(&self, batch: &[&Tensor<T>]) -> Result<Vec<f64>> {
        self.require(self.config.kind == BaselineKind::Rnd, "rnd_reward")?;
        let pred_ids = self.layout.predictor.as_ref().expect("predictor");
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(EVAL_CHUNK) {
            for o in chunk {
                self.check_obs(o)?;
            }
            let x = stack(chunk)?;
            let target = self.frozen_embed(x.clone())?;
            let mut g = Graph::inference();
            let xv = g.constant(x);
            let p = encode(&mut g, &self.model, pred_ids, xv)?;
            out.extend(per_sample_mse(g.value(p).data(), target.data(), chunk.len()));
        }
        Ok(out)
    }

    pub fn rnd_reward(&self, o_t: &Tensor<T>) -> Result<f64> {
        Ok(self.rnd_rewards(&[o_t])?[0])
    }

    /// One Adam step on the predictor; the target is never touched.
    pub fn rnd_train_step(&mut self, batch: &[&Tensor<T>]) -> Result<f64> {
        self.require(self.config.kind == BaselineKind::Rnd, "rnd_train_step")?;
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        for o in batch {
            self.check_obs(o)?;
        }
        let x = stack(batch)?;
        let target = self.frozen_embed(x.clone())?;
        let pred_ids = self.layout.predictor.clone().expect("predictor");
        let mut g = Graph::new();
        let xv = g.constant(x);
        let p = encode(&mut g, &self.model, &pred_ids, xv)?;
        let t = g.constant(target);
        let loss = g.mse(p, t)?;
        let before = g.value(loss).item().f64();
        g.backward_into(loss, &mut self.model)?;
        self.adam.step(&mut self.model)?;
        self.updates += 1;
        Ok(before)
    }

    /// Overwrites the RND predictor with the target's weights.
    pub fn copy_target_into_predictor(&mut self) -> Result<()> {
        self.require(self.config.kind == BaselineKind::Rnd, "copy_target_into_predictor")?;
        self.model.copy_values_from(&self.frozen)?;
        Ok(())
    }
}
