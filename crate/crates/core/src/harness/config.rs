//! Experiment configuration, read from TOML with four sections:
//!
//! ```toml
//! [run]
//! seeds = [0, 1, 2]            # non-empty; each seed also picks the env layout
//! total_timesteps = 300000
//! out_dir = "runs/maze_ficm_c"
//! checkpoint_interval = 50     # updates between checkpoints; 0 = final only
//! heatmap_interval = 50        # updates between heatmaps; 0 = final only
//! probe_interval = 1           # updates between probe evaluations
//! probe_pairs = 8              # fixed pairs scored at each probe interval
//! curiosity_samples = 256      # transitions used to train the generator per update
//! curiosity_minibatch = 32
//! eval_episodes = 20           # sampled-policy episodes scored at the end (maze)
//!
//! [env]
//! kind = "sparse_maze"         # drifters | sparse_maze
//! sparse_level = "very_sparse" # sparse | very_sparse
//! color = "rgb"                # rgb | gray
//! max_steps = 1000
//!
//! [curiosity]
//! kind = "ficm_c"              # ficm_s | ficm_c | rf | idf | rnd | none
//! reward_mode = "combined"     # intrinsic_only | extrinsic_only | combined
//! frames_per_input = 1         # 1 = two consecutive frames, 4 = stacked
//! zeta = 0.01                  # default 1.0 intrinsic_only, 0.01 otherwise
//! beta = 0.5
//! lr = 0.0001
//! normalize = true             # default: on unless intrinsic_only
//!
//! [ppo]                        # every key optional
//! gamma = 0.99
//! lambda = 0.95
//! clip = 0.2
//! epochs = 4
//! minibatch = 256
//! value_coef = 0.5
//! entropy_coef = 0.01
//! lr = 0.00025
//! rollout_len = 128
//! workers = 8
//! max_grad_norm = 0.5
//! frame_stack = 2
//! ```
//!
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{PpoConfig, RewardMode};
use crate::envs::{ColorMode, EnvConfig, EnvKind, SparseLevel};
use crate::error::{config_err, io_err, Error, Result};
use crate::flowpredictor::Variant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuriosityKind {
    FicmS,
    FicmC,
    Rf,
    Idf,
    Rnd,
    None,
}

impl CuriosityKind {
    pub fn ficm_variant(self) -> Option<Variant> {
        match self {
            CuriosityKind::FicmS => Some(Variant::S),
            CuriosityKind::FicmC => Some(Variant::C),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub total_timesteps: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub checkpoint_interval: usize,
    #[serde(default)]
    pub heatmap_interval: usize,
    #[serde(default = "one")]
    pub probe_interval: usize,
    #[serde(default = "default_probe_pairs")]
    pub probe_pairs: usize,
    #[serde(default = "default_curiosity_samples")]
    pub curiosity_samples: usize,
    #[serde(default = "default_curiosity_minibatch")]
    pub curiosity_minibatch: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
}

fn one() -> usize {
    1
}
fn default_probe_pairs() -> usize {
    8
}
fn default_curiosity_samples() -> usize {
    256
}
fn default_curiosity_minibatch() -> usize {
    32
}
fn default_eval_episodes() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    #[serde(default = "default_level")]
    pub sparse_level: SparseLevel,
    #[serde(default = "default_color")]
    pub color: ColorMode,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

fn default_level() -> SparseLevel {
    SparseLevel::VerySparse
}
fn default_color() -> ColorMode {
    ColorMode::Rgb
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuriositySection {
    pub kind: CuriosityKind,
    pub reward_mode: RewardMode,
    #[serde(default = "one")]
    pub frames_per_input: usize,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_curiosity_lr")]
    pub lr: f64,
    #[serde(default)]
    pub normalize: Option<bool>,
}

fn default_beta() -> f64 {
    0.5
}
fn default_curiosity_lr() -> f64 {
    1e-4
}

impl CuriositySection {
    pub fn zeta(&self) -> f64 {
        self.zeta.unwrap_or(match self.reward_mode {
            RewardMode::IntrinsicOnly => 1.0,
            _ => 0.01,
        })
    }

    pub fn normalize(&self) -> bool {
        self.normalize
            .unwrap_or(self.reward_mode != RewardMode::IntrinsicOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub curiosity: CuriositySection,
    #[serde(default)]
    pub ppo: PpoConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.seeds.is_empty() {
            return config_err("run.seeds must not be empty");
        }
        let mut uniq = r.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != r.seeds.len() {
            return config_err("run.seeds must be distinct");
        }
        if r.total_timesteps == 0 {
            return config_err("run.total_timesteps must be positive");
        }
        if r.probe_interval == 0 || r.curiosity_minibatch == 0 || r.curiosity_samples == 0 {
            return config_err("probe_interval, curiosity_samples and curiosity_minibatch must be positive");
        }
        if self.env.max_steps == Some(0) {
            return config_err("env.max_steps must be positive");
        }
        let c = &self.curiosity;
        if c.kind == CuriosityKind::None && c.reward_mode == RewardMode::IntrinsicOnly {
            return config_err("curiosity kind none cannot drive intrinsic_only training");
        }
        if !matches!(c.frames_per_input, 1 | 4) {
            return config_err("curiosity.frames_per_input must be 1 or 4");
        }
        if !(c.zeta() > 0.0 && c.zeta().is_finite()) {
            return config_err("curiosity.zeta must be positive");
        }
        if !(c.beta > 0.0 && c.beta.is_finite()) {
            return config_err("curiosity.beta must be positive");
        }
        if !(c.lr >= 0.0 && c.lr.is_finite()) {
            return config_err("curiosity.lr must be >= 0");
        }
        self.ppo.validate()
    }

    /// Environment of one seed. Workers restart silently when episode ends
    /// are hidden from the learner.
    pub fn env_config(&self, seed: u64) -> EnvConfig {
        let mut e = match self.env.kind {
            EnvKind::Drifters => EnvConfig::drifters(seed),
            EnvKind::SparseMaze => EnvConfig::maze(seed, self.env.sparse_level),
        };
        e.color = self.env.color;
        if let Some(m) = self.env.max_steps {
            e.max_steps = m;
        }
        e.auto_reset = self.curiosity.reward_mode.hides_episode_ends();
        e
    }

    pub fn updates(&self) -> usize {
        self.run.total_timesteps.div_ceil(self.ppo.batch_size())
    }

    /// The part of the configuration a checkpoint must agree with: model,
    /// environment and optimisation settings. Budget, seeds and paths may
    /// differ.
    pub fn model_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            env: &'a EnvSection,
            curiosity: &'a CuriositySection,
            ppo: &'a PpoConfig,
            curiosity_samples: usize,
            curiosity_minibatch: usize,
            probe_pairs: usize,
        }
        toml::to_string(&Key {
            env: &self.env,
            curiosity: &self.curiosity,
            ppo: &self.ppo,
            curiosity_samples: self.run.curiosity_samples,
            curiosity_minibatch: self.run.curiosity_minibatch,
            probe_pairs: self.run.probe_pairs,
        })
        .expect("fingerprint serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[run]
seeds = [0, 1]
total_timesteps = 2048
out_dir = "out"

[env]
kind = "sparse_maze"

[curiosity]
kind = "ficm_c"
reward_mode = "combined"
"#;

    #[test]
    fn defaults_follow_the_reward_mode() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.curiosity.zeta(), 0.01);
        assert!(c.curiosity.normalize());
        assert_eq!(c.ppo, PpoConfig::default());
        assert_eq!(c.updates(), 2);
        let pure = BASE.replace("combined", "intrinsic_only");
        let c = ExperimentConfig::from_toml(&pure).unwrap();
        assert_eq!(c.curiosity.zeta(), 1.0);
        assert!(!c.curiosity.normalize());
        assert!(c.env_config(3).auto_reset);
    }

    #[test]
    fn contradictions_and_unknown_keys_are_rejected() {
        let none = BASE.replace("ficm_c", "none").replace("combined", "intrinsic_only");
        assert!(matches!(ExperimentConfig::from_toml(&none), Err(Error::Config(_))));
        let extra = BASE.replace("[env]", "[env]\nspeed = 3");
        assert!(ExperimentConfig::from_toml(&extra).is_err());
        let ppo = format!("{BASE}\n[ppo]\nwarmup = 1\n");
        assert!(ExperimentConfig::from_toml(&ppo).is_err());
        let empty = BASE.replace("[0, 1]", "[]");
        assert!(ExperimentConfig::from_toml(&empty).is_err());
        let stack = BASE.replace("reward_mode = \"combined\"", "reward_mode = \"combined\"\nframes_per_input = 2");
        assert!(ExperimentConfig::from_toml(&stack).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }
}
