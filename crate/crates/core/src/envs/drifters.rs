//! 42x42 arena. The agent (3x3) starts at the bottom centre and moves 2 px
//! per step. Four 3x3 drones bounce along fixed lanes at 1 px per step; a
//! collision costs -1 and ends the episode. Six 2x2 pellets give +1 each.
//! The top two rows show one bar segment per pellet collected in the
//! current episode.
//!
//! Drone `k` at world clock `t` (frames since the environment was built,
//! not reset between episodes) sits at
//! `s = lo + tri((phase + t) mod 2L)` with `L = hi - lo` and
//! `tri(u) = u` for `u <= L`, `2L - u` otherwise; a horizontal drone is at
//! `(s, lane)`, a vertical one at `(lane, s)`.

use ficm_numerics::Rng;
use serde::{Deserialize, Serialize};

use super::canvas::{Canvas, Rgb};
use super::{EnvConfig, Outcome, SIZE};

pub const DRIFTERS_ACTIONS: usize = 5;

const AGENT: i64 = 3;
const DRONE: i64 = 3;
const PELLET: i64 = 2;
const SPEED: i64 = 2;
const HUD_ROWS: i64 = 2;
const TOP: i64 = HUD_ROWS + 1;
const START: (i64, i64) = (19, 37);
const PELLETS: usize = 6;
/// Drones never enter rows at or below this line.
const SAFE_ROW: i64 = 33;

const BACKGROUND: Rgb = [0.05, 0.05, 0.08];
const AGENT_COLOR: Rgb = [0.2, 0.9, 0.3];
const DRONE_COLOR: Rgb = [0.9, 0.2, 0.2];
const PELLET_COLOR: Rgb = [0.95, 0.85, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DronePath {
    pub horizontal: bool,
    pub lane: i64,
    pub lo: i64,
    pub hi: i64,
    pub phase: i64,
}

impl DronePath {
    /// Top-left corner at world clock `t`.
    pub fn position(&self, t: u64) -> (i64, i64) {
        let span = self.hi - self.lo;
        let period = 2 * span;
        let u = (self.phase + (t % period as u64) as i64) % period;
        let s = self.lo + if u <= span { u } else { period - u };
        if self.horizontal {
            (s, self.lane)
        } else {
            (self.lane, s)
        }
    }
}

fn overlaps(a: (i64, i64), sa: i64, b: (i64, i64), sb: i64) -> bool {
    a.0 < b.0 + sb && b.0 < a.0 + sa && a.1 < b.1 + sb && b.1 < a.1 + sa
}

/// Distinct lane coordinates at least `gap` apart.
fn lanes(rng: &mut Rng, lo: i64, hi: i64, gap: i64, n: usize) -> Vec<i64> {
    let mut out: Vec<i64> = Vec::new();
    while out.len() < n {
        let v = lo + rng.below((hi - lo + 1) as usize) as i64;
        if out.iter().all(|&o| (o - v).abs() >= gap) {
            out.push(v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drifters {
    pub(crate) cfg: EnvConfig,
    pub drones: Vec<DronePath>,
    pub pellets: Vec<(i64, i64)>,
    pub agent: (i64, i64),
    pub collected: Vec<bool>,
    /// World clock.
    pub clock: u64,
    /// Steps in the current episode.
    pub(crate) t: usize,
    pub(crate) terminal: bool,
}

impl Drifters {
    pub fn new(cfg: EnvConfig) -> Self {
        let mut rng = Rng::new(cfg.seed).split(0xD81F);
        let max = SIZE as i64 - DRONE;
        let rows = lanes(&mut rng, TOP + 1, 26, 6, 2);
        let cols = lanes(&mut rng, 2, max - 2, 8, 2);
        let mut drones = Vec::new();
        for &lane in &rows {
            let span = 2 * max;
            drones.push(DronePath {
                horizontal: true,
                lane,
                lo: 0,
                hi: max,
                phase: rng.below(span as usize) as i64,
            });
        }
        for &lane in &cols {
            let (lo, hi) = (TOP, SAFE_ROW - DRONE);
            drones.push(DronePath {
                horizontal: false,
                lane,
                lo,
                hi,
                phase: rng.below(2 * (hi - lo) as usize) as i64,
            });
        }
        let mut pellets: Vec<(i64, i64)> = Vec::new();
        while pellets.len() < PELLETS {
            let low = pellets.len() < 2;
            let x = 1 + rng.below((SIZE as i64 - PELLET - 1) as usize) as i64;
            let y = if low {
                SAFE_ROW + 1 + rng.below(4) as i64
            } else {
                TOP + 1 + rng.below((SAFE_ROW - TOP - PELLET - 2) as usize) as i64
            };
            let clear_of_start = !low || (5..=10).contains(&(x - START.0).abs());
            let apart = pellets
                .iter()
                .all(|&(px, py)| (px - x).abs() >= 5 || (py - y).abs() >= 5);
            if clear_of_start && apart && !overlaps((x, y), PELLET, START, AGENT) {
                pellets.push((x, y));
            }
        }
        Self {
            cfg,
            drones,
            pellets,
            agent: START,
            collected: vec![false; PELLETS],
            clock: 0,
            t: 0,
            terminal: false,
        }
    }

    pub fn start() -> (i64, i64) {
        START
    }

    pub(crate) fn restart(&mut self) {
        self.agent = START;
        self.collected.iter_mut().for_each(|c| *c = false);
        self.t = 0;
        self.terminal = false;
    }

    pub fn drone_positions(&self) -> Vec<(i64, i64)> {
        self.drones.iter().map(|d| d.position(self.clock)).collect()
    }

    /// Applies one action: move, advance drones, then resolve pellets and
    /// collisions.
    pub(crate) fn advance(&mut self, action: usize) -> Outcome {
        let (dx, dy) = match action {
            1 => (0, -SPEED),
            2 => (0, SPEED),
            3 => (-SPEED, 0),
            4 => (SPEED, 0),
            _ => (0, 0),
        };
        let max = SIZE as i64 - AGENT;
        self.agent = (
            (self.agent.0 + dx).clamp(0, max),
            (self.agent.1 + dy).clamp(TOP, max),
        );
        self.clock += 1;
        self.t += 1;
        let mut reward = 0.0;
        for (i, &p) in self.pellets.iter().enumerate() {
            if !self.collected[i] && overlaps(self.agent, AGENT, p, PELLET) {
                self.collected[i] = true;
                reward += 1.0;
            }
        }
        let hit = self
            .drone_positions()
            .iter()
            .any(|&d| overlaps(self.agent, AGENT, d, DRONE));
        if hit {
            reward -= 1.0;
        }
        Outcome {
            reward,
            terminal: hit,
            success: false,
        }
    }

    pub(crate) fn render(&self) -> Canvas {
        let mut c = Canvas::new(SIZE, SIZE, BACKGROUND);
        let got = self.collected.iter().filter(|&&v| v).count() as i64;
        for k in 0..got {
            c.rect(1 + 7 * k, 0, 5, HUD_ROWS, PELLET_COLOR);
        }
        for (i, &(x, y)) in self.pellets.iter().enumerate() {
            if !self.collected[i] {
                c.rect(x, y, PELLET, PELLET, PELLET_COLOR);
            }
        }
        for (x, y) in self.drone_positions() {
            c.rect(x, y, DRONE, DRONE, DRONE_COLOR);
        }
        c.rect(self.agent.0, self.agent.1, AGENT, AGENT, AGENT_COLOR);
        c
    }

    /// Whether a drone occupies any pixel of the `size` block at `p` at
    /// world clock `t`.
    pub fn drone_hits(&self, p: (i64, i64), size: i64, t: u64) -> bool {
        self.drones
            .iter()
            .any(|d| overlaps(p, size, d.position(t), DRONE))
    }

    pub fn agent_size() -> i64 {
        AGENT
    }

    pub fn pellet_size() -> i64 {
        PELLET
    }

    pub fn agent_bounds() -> (i64, i64, i64) {
        (0, TOP, SIZE as i64 - AGENT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{reset, Env};

    fn drifters(seed: u64) -> Drifters {
        match reset(&EnvConfig::drifters(seed)).unwrap().0 {
            Env::Drifters(d) => d,
            _ => unreachable!(),
        }
    }

    #[test]
    fn drones_stay_above_the_safe_rows_and_keep_moving() {
        for seed in 0..20 {
            let d = drifters(seed);
            for t in 0..400 {
                for path in &d.drones {
                    let (x, y) = path.position(t);
                    assert!((0..=39).contains(&x) && (TOP..SAFE_ROW).contains(&y));
                    assert!(y + DRONE <= SAFE_ROW);
                    assert_ne!(path.position(t), path.position(t + 1));
                }
            }
        }
    }

    #[test]
    fn pellets_are_inside_the_play_area() {
        for seed in 0..20 {
            let d = drifters(seed);
            assert_eq!(d.pellets.len(), PELLETS);
            for &(x, y) in &d.pellets {
                assert!(x >= 0 && x + PELLET <= SIZE as i64 && y >= TOP && y + PELLET <= SIZE as i64);
            }
        }
    }

    #[test]
    fn start_is_clear_of_drones() {
        for seed in 0..20 {
            let d = drifters(seed);
            for t in 0..200 {
                assert!(!d.drone_hits(START, AGENT, t));
            }
        }
    }
}
