//! Novelty decay on a fixed trajectory: the flow predictor trains on
//! minibatches drawn from one recorded Drifters trajectory while the flow
//! loss of familiar pairs (taken from that trajectory) and held-out pairs
//! (from a Drifters arena with a different layout) is logged.

use std::fs;
use std::path::{Path, PathBuf};

use ficm_numerics::Rng;
use serde::{Deserialize, Serialize};

use crate::curiosity::{ficm_train_step, FicmConfig, FicmState};
use crate::envs::{action_space, ColorMode, EnvConfig, Observation};
use crate::error::{config_err, io_err, Error, Result};
use crate::flowpredictor::{PredictorConfig, Variant};
use crate::agent::Worker;

use super::probe::probe_novelty;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    pub seed: u64,
    pub variant: Variant,
    pub color: ColorMode,
    pub frames_per_input: usize,
    /// Transitions in the recorded trajectory.
    pub trajectory_len: usize,
    pub train_steps: usize,
    pub minibatch: usize,
    pub familiar_probes: usize,
    pub heldout_probes: usize,
    pub lr: f64,
    pub beta: f64,
    /// Steps between probe evaluations; the first and last step are always
    /// logged.
    pub log_interval: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: Variant::C,
            color: ColorMode::Rgb,
            frames_per_input: 1,
            trajectory_len: 256,
            train_steps: 2000,
            minibatch: 8,
            familiar_probes: 8,
            heldout_probes: 8,
            lr: 1e-4,
            beta: 0.5,
            log_interval: 100,
            out_dir: None,
        }
    }
}

impl DecayConfig {
    pub fn validate(&self) -> Result<()> {
        if ![1, 4].contains(&self.frames_per_input) {
            return config_err("frames_per_input must be 1 or 4");
        }
        if self.trajectory_len == 0 || self.minibatch == 0 || self.familiar_probes == 0 || self.heldout_probes == 0 {
            return config_err("trajectory, minibatch and probe counts must be positive");
        }
        if self.familiar_probes > self.trajectory_len {
            return config_err("more familiar probes than recorded transitions");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("decay config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub step: usize,
    /// Mean pre-update training loss of the minibatch at `step`; zero at
    /// step 0.
    pub train_loss: f64,
    pub familiar_mean: f64,
    pub heldout_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
}

impl DecayReport {
    pub fn initial_familiar(&self) -> f64 {
        self.rows.first().map_or(f64::NAN, |r| r.familiar_mean)
    }

    pub fn last(&self) -> DecayRow {
        *self.rows.last().expect("at least one row")
    }

    /// Familiar loss fell below `fraction` of its initial value and
    /// held-out pairs end strictly above familiar ones.
    pub fn decays(&self, fraction: f64) -> bool {
        let last = self.last();
        last.familiar_mean < fraction * self.initial_familiar() && last.heldout_mean > last.familiar_mean
    }
}

/// Layout seed of the held-out arena.
pub fn heldout_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0FF5
}

/// `count` consecutive curiosity input pairs from a uniform-random policy
/// on the Drifters arena built from `env_seed`.
pub fn drifters_trajectory(
    env_seed: u64,
    color: ColorMode,
    frames_per_input: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<(Observation, Observation)>> {
    let mut env = EnvConfig::drifters(env_seed);
    env.color = color;
    env.auto_reset = true;
    let a = action_space(&env);
    let mut w = Worker::new(&env, frames_per_input)?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let before = w.stacked(frames_per_input);
        let step = w.env.step(rng.below(a))?;
        w.push_frame(step.observation);
        out.push((before, w.stacked(frames_per_input)));
    }
    Ok(out)
}

fn evenly_spaced<T: Clone>(items: &[T], n: usize) -> Vec<T> {
    (0..n).map(|i| items[i * items.len() / n].clone()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn refs(p: &[(Observation, Observation)]) -> Vec<(&Observation, &Observation)> {
    p.iter().map(|(a, b)| (a, b)).collect()
}

pub const DECAY_HEADER: &str = "step,train_loss,familiar_mean,heldout_mean";

pub fn emit_decay_csv(rows: &[DecayRow], path: &Path) -> Result<()> {
    let mut text = format!("{DECAY_HEADER}\n");
    for r in rows {
        text.push_str(&format!(
            "{},{:.8},{:.8},{:.8}\n",
            r.step, r.train_loss, r.familiar_mean, r.heldout_mean
        ));
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Records the trajectory and probes, trains for `train_steps` minibatch
/// updates and logs probe losses. Writes `decay.csv` and `config.toml` when
/// an output directory is set.
pub fn run_decay(cfg: &DecayConfig) -> Result<DecayReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("config.toml");
        fs::write(&p, cfg.to_toml()).map_err(io_err(&p))?;
    }
    let root = Rng::new(cfg.seed);
    let trajectory = drifters_trajectory(
        cfg.seed,
        cfg.color,
        cfg.frames_per_input,
        cfg.trajectory_len,
        &mut root.split(1),
    )?;
    let heldout_all = drifters_trajectory(
        heldout_seed(cfg.seed),
        cfg.color,
        cfg.frames_per_input,
        cfg.trajectory_len,
        &mut root.split(2),
    )?;
    let familiar = evenly_spaced(&trajectory, cfg.familiar_probes);
    let heldout = evenly_spaced(&heldout_all, cfg.heldout_probes);
    let mut f = FicmConfig::new(PredictorConfig::new(cfg.variant, cfg.color.channels(), cfg.frames_per_input));
    f.lr = cfg.lr;
    f.beta = cfg.beta;
    let mut state = FicmState::new(f, &mut root.split(3))?;
    let mut rng = root.split(4);
    let log = |state: &FicmState<f32>, step, train_loss| -> Result<DecayRow> {
        Ok(DecayRow {
            step,
            train_loss,
            familiar_mean: mean(&probe_novelty(state, &refs(&familiar))?),
            heldout_mean: mean(&probe_novelty(state, &refs(&heldout))?),
        })
    };
    let mut rows = vec![log(&state, 0, 0.0)?];
    let all = refs(&trajectory);
    for step in 1..=cfg.train_steps {
        let batch: Vec<_> = (0..cfg.minibatch).map(|_| all[rng.below(all.len())]).collect();
        let loss = ficm_train_step(&mut state, &batch)?;
        if step == cfg.train_steps || (cfg.log_interval > 0 && step % cfg.log_interval == 0) {
            rows.push(log(&state, step, loss)?);
        }
    }
    if let Some(dir) = &cfg.out_dir {
        emit_decay_csv(&rows, &dir.join("decay.csv"))?;
    }
    Ok(DecayReport { rows })
}
