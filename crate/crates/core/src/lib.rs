//! Flow-based intrinsic curiosity for reinforcement learning from pixels:
//! a flow predictor whose warping error is used as an exploration bonus,
//! baseline curiosity signals, a PPO agent, two pixel environments and an
//! experiment harness.

pub mod agent;
pub mod batch;
pub mod curiosity;
pub mod envs;
pub mod error;
pub mod flowpredictor;
pub mod harness;
pub mod pnm;

pub use error::{Error, Result};
