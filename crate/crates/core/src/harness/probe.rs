//! Probe-pair novelty, flow-loss heatmaps and probe-pair directories.

use std::fs;
use std::path::{Path, PathBuf};

use ficm_numerics::Tensor;

use crate::curiosity::{ficm_losses, flow_loss_map, FicmState};
use crate::envs::Observation;
use crate::error::{io_err, Error, Result};
use crate::pnm::{read_image, write_image, write_pgm_bytes};

/// Flow loss of every probe pair under the current predictor. Pure.
pub fn probe_novelty(state: &FicmState<f32>, probes: &[(&Observation, &Observation)]) -> Result<Vec<f64>> {
    if probes.is_empty() {
        return Ok(Vec::new());
    }
    Ok(ficm_losses(state, probes)?.iter().map(|l| l.l_g).collect())
}

/// Min-max scaling to bytes; a constant map becomes all zeros.
pub fn scale_to_bytes(map: &[f64]) -> Vec<u8> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; map.len()];
    }
    map.iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Writes the per-pixel flow loss of `pair` as a binary graymap; brighter
/// means higher loss. Returns the unscaled map.
pub fn emit_flowloss_heatmap(
    state: &FicmState<f32>,
    pair: (&Observation, &Observation),
    path: &Path,
) -> Result<Vec<f64>> {
    let map = flow_loss_map(state, pair.0, pair.1)?;
    let s = pair.0.shape();
    write_pgm_bytes(path, s[2], s[1], &scale_to_bytes(&map))?;
    Ok(map)
}

/// Repeats a single frame `k` times along channels, matching a stacked
/// input of a static scene.
pub fn replicate_frame(frame: &Observation, k: usize) -> Observation {
    if k == 1 {
        return frame.clone();
    }
    let s = frame.shape();
    let mut data = Vec::with_capacity(k * frame.numel());
    for _ in 0..k {
        data.extend_from_slice(frame.data());
    }
    Tensor::new(&[k * s[0], s[1], s[2]], data).expect("replicated extents")
}

/// The first `channels` channels of a stacked input: the oldest frame when
/// `channels` is the per-frame count.
pub fn first_frame(obs: &Observation, channels: usize) -> Observation {
    let s = obs.shape();
    let n = channels * s[1] * s[2];
    Tensor::new(&[channels, s[1], s[2]], obs.data()[..n].to_vec()).expect("frame extents")
}

/// The last `channels` channels of a stacked input (its newest frame).
pub fn last_frame(obs: &Observation, channels: usize) -> Observation {
    let s = obs.shape();
    let n = channels * s[1] * s[2];
    Tensor::new(&[channels, s[1], s[2]], obs.data()[obs.numel() - n..].to_vec()).expect("frame extents")
}

/// Writes pairs as `NNN_a.ppm` / `NNN_b.ppm` (or `.pgm` for gray).
pub fn write_pair_dir(dir: &Path, pairs: &[(Observation, Observation)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let ext = if a.shape()[0] == 1 { "pgm" } else { "ppm" };
        write_image(&dir.join(format!("{i:03}_a.{ext}")), a)?;
        write_image(&dir.join(format!("{i:03}_b.{ext}")), b)?;
    }
    Ok(())
}

/// Reads every `NNN_a` / `NNN_b` image pair in `dir`, sorted by index.
pub fn read_pair_dir(dir: &Path) -> Result<Vec<(PathBuf, Observation, Observation)>> {
    let mut firsts: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.ends_with("_a"))
        })
        .collect();
    firsts.sort();
    let mut out = Vec::new();
    for a in firsts {
        let stem = a.file_stem().and_then(|s| s.to_str()).expect("filtered").to_string();
        let ext = a.extension().and_then(|s| s.to_str()).unwrap_or("");
        let b = a.with_file_name(format!("{}_b.{ext}", &stem[..stem.len() - 2]));
        if !b.exists() {
            return Err(Error::InvalidInput(format!("{} has no partner {}", a.display(), b.display())));
        }
        let (ia, ib) = (read_image(&a)?, read_image(&b)?);
        out.push((a, ia, ib));
    }
    Ok(out)
}
