//! Versioned binary checkpoints: an 8-byte magic, a little-endian `u32`
//! format version, then the bincode encoding of the config fingerprint and
//! the full per-seed training state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::SeedState;
use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"FICMCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Payload {
    fingerprint: String,
    state: SeedState,
}

pub fn checkpoint_bytes(cfg: &ExperimentConfig, state: &SeedState) -> Result<Vec<u8>> {
    let payload = Payload {
        fingerprint: cfg.model_fingerprint(),
        state: state.clone(),
    };
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let body = bincode::serialize(&payload).map_err(|e| Error::InvalidInput(e.to_string()))?;
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn checkpoint_save(cfg: &ExperimentConfig, state: &SeedState, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(cfg, state)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Reads a checkpoint without checking it against a config. Returns the
/// stored fingerprint and state.
pub fn checkpoint_read(path: &Path) -> Result<(String, SeedState)> {
    let bad = |detail: String| Error::Checkpoint {
        path: path.into(),
        detail,
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("format version {version}, expected {VERSION}")));
    }
    let p: Payload = bincode::deserialize(&bytes[12..]).map_err(|e| bad(format!("corrupt payload: {e}")))?;
    Ok((p.fingerprint, p.state))
}

/// Loads a checkpoint written under a compatible config.
pub fn checkpoint_load(cfg: &ExperimentConfig, path: &Path) -> Result<SeedState> {
    let (fingerprint, state) = checkpoint_read(path)?;
    if fingerprint != cfg.model_fingerprint() {
        return Err(Error::Checkpoint {
            path: path.into(),
            detail: "written under a different env, curiosity or ppo configuration".into(),
        });
    }
    Ok(state)
}
