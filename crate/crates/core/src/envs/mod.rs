//! Deterministic pixel environments: `Drifters`, an arena with drones on
//! periodic paths and collectible pellets, and `SparseMaze`, a 3x3-room maze
//! with a single goal and drifting room textures.

mod canvas;
mod drifters;
mod maze;

pub use canvas::{Canvas, Rgb};
pub use drifters::{DronePath, Drifters, DRIFTERS_ACTIONS};
pub use maze::{MazeLayout, SparseMaze, MAZE_ACTIONS};

use ficm_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Pixels `[C,H,W]` in `[0, 1]`.
pub type Observation = Tensor<f32>;

pub const SIZE: usize = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Drifters,
    SparseMaze,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseLevel {
    Sparse,
    VerySparse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    Rgb,
    Gray,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Rgb => 3,
            ColorMode::Gray => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub seed: u64,
    pub sparse_level: SparseLevel,
    pub color: ColorMode,
    pub max_steps: usize,
    /// Start a new episode immediately when one ends and report
    /// `done = false`.
    pub auto_reset: bool,
}

impl EnvConfig {
    pub fn drifters(seed: u64) -> Self {
        Self {
            kind: EnvKind::Drifters,
            seed,
            sparse_level: SparseLevel::VerySparse,
            color: ColorMode::Rgb,
            max_steps: 500,
            auto_reset: false,
        }
    }

    pub fn maze(seed: u64, level: SparseLevel) -> Self {
        Self {
            kind: EnvKind::SparseMaze,
            seed,
            sparse_level: level,
            color: ColorMode::Rgb,
            max_steps: 1000,
            auto_reset: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return config_err("episode step cap must be positive");
        }
        Ok(())
    }
}

pub fn action_space(cfg: &EnvConfig) -> usize {
    match cfg.kind {
        EnvKind::Drifters => DRIFTERS_ACTIONS,
        EnvKind::SparseMaze => MAZE_ACTIONS,
    }
}

pub fn observation_shape(cfg: &EnvConfig) -> [usize; 3] {
    [cfg.color.channels(), SIZE, SIZE]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Steps taken in the episode that produced this result.
    pub step: usize,
    /// The episode ended on this step (also set when auto-reset hides it).
    pub episode_over: bool,
    /// The episode ended by reaching its goal.
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub extrinsic_reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Env {
    Drifters(Drifters),
    SparseMaze(SparseMaze),
}

/// Builds an environment in its initial state.
pub fn reset(cfg: &EnvConfig) -> Result<(Env, Observation)> {
    cfg.validate()?;
    let env = match cfg.kind {
        EnvKind::Drifters => Env::Drifters(Drifters::new(cfg.clone())),
        EnvKind::SparseMaze => Env::SparseMaze(SparseMaze::new(cfg.clone())),
    };
    let obs = env.observation();
    Ok((env, obs))
}

/// Internal per-step outcome before auto-reset handling.
pub(crate) struct Outcome {
    pub reward: f64,
    pub terminal: bool,
    pub success: bool,
}

impl Env {
    pub fn config(&self) -> &EnvConfig {
        match self {
            Env::Drifters(e) => &e.cfg,
            Env::SparseMaze(e) => &e.cfg,
        }
    }

    pub fn observation(&self) -> Observation {
        let canvas = match self {
            Env::Drifters(e) => e.render(),
            Env::SparseMaze(e) => e.render(),
        };
        canvas.to_observation(self.config().color)
    }

    pub fn action_space(&self) -> usize {
        action_space(self.config())
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            Env::Drifters(e) => e.terminal,
            Env::SparseMaze(e) => e.terminal,
        }
    }

    pub fn episode_step(&self) -> usize {
        match self {
            Env::Drifters(e) => e.t,
            Env::SparseMaze(e) => e.t,
        }
    }

    /// Starts a new episode from the initial layout.
    pub fn reset_episode(&mut self) -> Observation {
        match self {
            Env::Drifters(e) => e.restart(),
            Env::SparseMaze(e) => e.restart(),
        }
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if action >= self.action_space() {
            return Err(Error::InvalidInput(format!(
                "action {action} outside 0..{}",
                self.action_space()
            )));
        }
        if self.is_terminal() {
            return Err(Error::TerminalStep);
        }
        let cap = self.config().max_steps;
        let out = match self {
            Env::Drifters(e) => e.advance(action),
            Env::SparseMaze(e) => e.advance(action),
        };
        let step = self.episode_step();
        let over = out.terminal || step >= cap;
        let mut info = StepInfo {
            step,
            episode_over: over,
            success: out.success,
        };
        if over && self.config().auto_reset {
            let observation = self.reset_episode();
            info.step = step;
            return Ok(StepResult {
                observation,
                extrinsic_reward: out.reward,
                done: false,
                info,
            });
        }
        if over {
            match self {
                Env::Drifters(e) => e.terminal = true,
                Env::SparseMaze(e) => e.terminal = true,
            }
        }
        Ok(StepResult {
            observation: self.observation(),
            extrinsic_reward: out.reward,
            done: over,
            info,
        })
    }
}
