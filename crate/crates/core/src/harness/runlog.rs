//! Training curves and their CSV form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const CURVE_HEADER: [&str; 6] = [
    "timestep",
    "ext_return_mean",
    "int_reward_mean",
    "curiosity_loss",
    "entropy",
    "clip_frac",
];

/// Decimal places of every real-valued CSV column.
pub const DECIMALS: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub timestep: u64,
    /// Mean extrinsic return of episodes that ended during this update's
    /// rollout; the previous value is carried when none ended.
    pub ext_return_mean: f64,
    pub int_reward_mean: f64,
    pub curiosity_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

/// Novelty of the fixed probe pairs at one point in training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub timestep: u64,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub rows: Vec<CurveRow>,
    pub probes: Vec<ProbeRow>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv {}: {e}", path.display()))
}

fn fmt(v: f64) -> String {
    format!("{v:.DECIMALS$}")
}

/// Header plus one fixed-precision row per update.
pub fn emit_curve_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e| csv_err(path, e);
    w.write_record(CURVE_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.timestep.to_string(),
            fmt(r.ext_return_mean),
            fmt(r.int_reward_mean),
            fmt(r.curiosity_loss),
            fmt(r.entropy),
            fmt(r.clip_frac),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn parse_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CURVE_HEADER) {
        return Err(Error::InvalidInput(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    let bad = |what: &str| Error::InvalidInput(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CURVE_HEADER[i]));
        rows.push(CurveRow {
            timestep: rec[0].parse().map_err(|_| bad("timestep"))?,
            ext_return_mean: f(1)?,
            int_reward_mean: f(2)?,
            curiosity_loss: f(3)?,
            entropy: f(4)?,
            clip_frac: f(5)?,
        });
    }
    Ok(rows)
}

/// Column-wise mean of equally long curves.
pub fn mean_curve(curves: &[Vec<CurveRow>]) -> Vec<CurveRow> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    let k = curves.len() as f64;
    (0..first.len())
        .map(|i| {
            let avg = |f: fn(&CurveRow) -> f64| curves.iter().map(|c| f(&c[i])).sum::<f64>() / k;
            CurveRow {
                timestep: first[i].timestep,
                ext_return_mean: avg(|r| r.ext_return_mean),
                int_reward_mean: avg(|r| r.int_reward_mean),
                curiosity_loss: avg(|r| r.curiosity_loss),
                entropy: avg(|r| r.entropy),
                clip_frac: avg(|r| r.clip_frac),
            }
        })
        .collect()
}

/// `timestep, probe_0, probe_1, ...`.
pub fn emit_probe_csv(rows: &[ProbeRow], path: &Path) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.losses.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e| csv_err(path, e);
    let mut header = vec!["timestep".to_string()];
    header.extend((0..n).map(|i| format!("probe_{i}")));
    w.write_record(&header).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.timestep.to_string()];
        rec.extend(r.losses.iter().map(|&v| format!("{v:.10e}")));
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(path, bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        emit_curve_csv(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().trim(), CURVE_HEADER.join(","));
        assert!(parse_curve_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn mean_of_two_curves() {
        let a = vec![CurveRow {
            timestep: 8,
            ext_return_mean: 1.0,
            entropy: 2.0,
            ..Default::default()
        }];
        let b = vec![CurveRow {
            timestep: 8,
            ext_return_mean: 3.0,
            entropy: 0.0,
            ..Default::default()
        }];
        let m = mean_curve(&[a, b]);
        assert_eq!(m[0].ext_return_mean, 2.0);
        assert_eq!(m[0].entropy, 1.0);
        assert!(mean_curve(&[]).is_empty());
    }
}
