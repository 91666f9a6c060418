//! Nine rooms on a 3x3 grid joined by one-cell doorways that form a seeded
//! spanning tree, rendered top-down at 2 px per cell. The goal sits in the
//! room farthest (in doorways) from the top-left corner room. Every room
//! floor carries its own seeded texture that drifts one pixel per step, in
//! a room-specific direction, while the agent is inside that room.

use std::collections::VecDeque;

use ficm_numerics::Rng;
use serde::{Deserialize, Serialize};

use super::canvas::{Canvas, Rgb};
use super::{EnvConfig, Outcome, SparseLevel, SIZE};

pub const MAZE_ACTIONS: usize = 4;

const ROOMS: usize = 3;
/// Interior cells per room side.
pub const ROOM: usize = 5;
const CELL: usize = 2;
const GRID: usize = ROOMS * ROOM + ROOMS + 1;
const OFFSET: usize = (SIZE - GRID * CELL) / 2;
const TILE: usize = 6;
/// Doorways between the start room and the start position in the sparse
/// setting.
const SPARSE_DISTANCE: usize = 3;

const WALL: Rgb = [0.45, 0.45, 0.5];
const FLOOR: Rgb = [0.08, 0.08, 0.08];
const AGENT_COLOR: Rgb = [0.95, 0.95, 0.95];
const GOAL_COLOR: Rgb = [0.95, 0.85, 0.1];
const PALETTE: [Rgb; 9] = [
    [0.8, 0.2, 0.2],
    [0.2, 0.7, 0.2],
    [0.2, 0.3, 0.9],
    [0.8, 0.6, 0.1],
    [0.7, 0.2, 0.7],
    [0.1, 0.7, 0.7],
    [0.6, 0.4, 0.2],
    [0.4, 0.6, 0.9],
    [0.9, 0.4, 0.6],
];
const DIRECTIONS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomStyle {
    pub color: Rgb,
    pub velocity: (i64, i64),
    pub pattern: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeLayout {
    /// `GRID x GRID` cells, true where a wall stands.
    pub walls: Vec<bool>,
    /// Room adjacency of the spanning tree.
    pub doors: Vec<(usize, usize)>,
    pub styles: Vec<RoomStyle>,
    pub start_room: usize,
    pub goal_room: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
}

fn room_origin(r: usize) -> (usize, usize) {
    let (ri, rj) = (r / ROOMS, r % ROOMS);
    (1 + rj * (ROOM + 1), 1 + ri * (ROOM + 1))
}

fn room_center(r: usize) -> (usize, usize) {
    let (x, y) = room_origin(r);
    (x + ROOM / 2, y + ROOM / 2)
}

/// Room containing cell `(x, y)`, or `None` for walls and doorways.
pub fn room_of(x: usize, y: usize) -> Option<usize> {
    if x == 0 || y == 0 || x % (ROOM + 1) == 0 || y % (ROOM + 1) == 0 || x >= GRID || y >= GRID {
        return None;
    }
    Some((y / (ROOM + 1)) * ROOMS + x / (ROOM + 1))
}

fn neighbours(r: usize) -> Vec<usize> {
    let (i, j) = (r / ROOMS, r % ROOMS);
    let mut out = Vec::new();
    if i > 0 {
        out.push(r - ROOMS);
    }
    if i + 1 < ROOMS {
        out.push(r + ROOMS);
    }
    if j > 0 {
        out.push(r - 1);
    }
    if j + 1 < ROOMS {
        out.push(r + 1);
    }
    out
}

/// Doorway distances from `from` over the tree.
fn room_distances(doors: &[(usize, usize)], from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; ROOMS * ROOMS];
    dist[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(r) = q.pop_front() {
        for &(a, b) in doors {
            let other = if a == r { b } else if b == r { a } else { continue };
            if dist[other] == usize::MAX {
                dist[other] = dist[r] + 1;
                q.push_back(other);
            }
        }
    }
    dist
}

impl MazeLayout {
    pub fn generate(seed: u64, level: SparseLevel) -> Self {
        let mut rng = Rng::new(seed).split(0x3A2E);
        let n = ROOMS * ROOMS;
        // Randomised depth-first spanning tree from the corner room.
        let mut doors = Vec::new();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(&r) = stack.last() {
            let open: Vec<usize> = neighbours(r).into_iter().filter(|&m| !seen[m]).collect();
            if open.is_empty() {
                stack.pop();
                continue;
            }
            let m = open[rng.below(open.len())];
            seen[m] = true;
            doors.push((r, m));
            stack.push(m);
        }
        let mut walls = vec![false; GRID * GRID];
        for y in 0..GRID {
            for x in 0..GRID {
                walls[y * GRID + x] = room_of(x, y).is_none();
            }
        }
        for &(a, b) in &doors {
            let (lo, hi) = (a.min(b), a.max(b));
            let k = rng.below(ROOM);
            let (ox, oy) = room_origin(lo);
            let (x, y) = if hi == lo + 1 {
                (ox + ROOM, oy + k)
            } else {
                (ox + k, oy + ROOM)
            };
            walls[y * GRID + x] = false;
        }
        let mut colors: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut colors);
        let mut dirs: Vec<usize> = (0..n).map(|i| i % DIRECTIONS.len()).collect();
        rng.shuffle(&mut dirs);
        let styles = (0..n)
            .map(|r| RoomStyle {
                color: PALETTE[colors[r]],
                velocity: DIRECTIONS[dirs[r]],
                pattern: (0..TILE * TILE).map(|_| rng.uniform() < 0.35).collect(),
            })
            .collect();

        let corner = 0;
        let from_corner = room_distances(&doors, corner);
        let goal_room = (0..n)
            .max_by_key(|&r| (from_corner[r], r))
            .expect("nine rooms");
        let start_room = match level {
            SparseLevel::VerySparse => corner,
            SparseLevel::Sparse => {
                let from_goal = room_distances(&doors, goal_room);
                // Walk from the corner towards the goal until SPARSE_DISTANCE
                // doorways remain.
                let mut r = corner;
                while from_goal[r] > SPARSE_DISTANCE {
                    r = doors
                        .iter()
                        .filter_map(|&(a, b)| {
                            if a == r {
                                Some(b)
                            } else if b == r {
                                Some(a)
                            } else {
                                None
                            }
                        })
                        .find(|&m| from_goal[m] + 1 == from_goal[r])
                        .expect("tree path");
                }
                r
            }
        };
        Self {
            walls,
            doors,
            styles,
            start_room,
            goal_room,
            start: room_center(start_room),
            goal: room_center(goal_room),
        }
    }

    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        x >= GRID || y >= GRID || self.walls[y * GRID + x]
    }

    pub fn grid() -> usize {
        GRID
    }

    /// Doorway count between the start and goal rooms.
    pub fn room_distance(&self) -> usize {
        room_distances(&self.doors, self.start_room)[self.goal_room]
    }

    /// Shortest cell path from start to goal as a list of actions.
    pub fn solution(&self) -> Vec<usize> {
        let idx = |(x, y): (usize, usize)| y * GRID + x;
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; GRID * GRID];
        let mut q = VecDeque::from([self.start]);
        let mut seen = vec![false; GRID * GRID];
        seen[idx(self.start)] = true;
        while let Some(c) = q.pop_front() {
            if c == self.goal {
                break;
            }
            for a in 0..MAZE_ACTIONS {
                let n = step_cell(c, a);
                if !self.is_wall(n.0, n.1) && !seen[idx(n)] {
                    seen[idx(n)] = true;
                    prev[idx(n)] = Some(c);
                    q.push_back(n);
                }
            }
        }
        let mut actions = Vec::new();
        let mut c = self.goal;
        while let Some(p) = prev[idx(c)] {
            let a = (0..MAZE_ACTIONS).find(|&a| step_cell(p, a) == c).expect("adjacent");
            actions.push(a);
            c = p;
        }
        actions.reverse();
        actions
    }
}

/// Cell reached by `action` (0 up, 1 down, 2 left, 3 right), ignoring walls.
fn step_cell((x, y): (usize, usize), action: usize) -> (usize, usize) {
    match action {
        0 => (x, y.saturating_sub(1)),
        1 => (x, y + 1),
        2 => (x.saturating_sub(1), y),
        _ => (x + 1, y),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMaze {
    pub(crate) cfg: EnvConfig,
    pub layout: MazeLayout,
    pub agent: (usize, usize),
    /// Texture offset of each room in pixels.
    pub phases: Vec<(i64, i64)>,
    pub(crate) t: usize,
    pub(crate) terminal: bool,
}

impl SparseMaze {
    pub fn new(cfg: EnvConfig) -> Self {
        let layout = MazeLayout::generate(cfg.seed, cfg.sparse_level);
        let agent = layout.start;
        Self {
            cfg,
            layout,
            agent,
            phases: vec![(0, 0); ROOMS * ROOMS],
            t: 0,
            terminal: false,
        }
    }

    pub(crate) fn restart(&mut self) {
        self.agent = self.layout.start;
        self.phases.iter_mut().for_each(|p| *p = (0, 0));
        self.t = 0;
        self.terminal = false;
    }

    pub(crate) fn advance(&mut self, action: usize) -> Outcome {
        let n = step_cell(self.agent, action);
        if !self.layout.is_wall(n.0, n.1) {
            self.agent = n;
        }
        self.t += 1;
        if let Some(r) = room_of(self.agent.0, self.agent.1) {
            let v = self.layout.styles[r].velocity;
            let p = &mut self.phases[r];
            *p = (p.0 + v.0, p.1 + v.1);
        }
        let success = self.agent == self.layout.goal;
        Outcome {
            reward: if success { 1.0 } else { 0.0 },
            terminal: success,
            success,
        }
    }

    pub(crate) fn render(&self) -> Canvas {
        let mut c = Canvas::new(SIZE, SIZE, [0.0; 3]);
        for y in 0..GRID {
            for x in 0..GRID {
                let (px, py) = ((OFFSET + x * CELL) as i64, (OFFSET + y * CELL) as i64);
                if self.layout.is_wall(x, y) {
                    c.rect(px, py, CELL as i64, CELL as i64, WALL);
                    continue;
                }
                let Some(r) = room_of(x, y) else {
                    c.rect(px, py, CELL as i64, CELL as i64, FLOOR);
                    continue;
                };
                let style = &self.layout.styles[r];
                let (ox, oy) = self.phases[r];
                for dy in 0..CELL as i64 {
                    for dx in 0..CELL as i64 {
                        let (qx, qy) = (px + dx, py + dy);
                        let tx = (qx - ox).rem_euclid(TILE as i64) as usize;
                        let ty = (qy - oy).rem_euclid(TILE as i64) as usize;
                        let col = if style.pattern[ty * TILE + tx] {
                            [
                                0.1 + 0.5 * style.color[0],
                                0.1 + 0.5 * style.color[1],
                                0.1 + 0.5 * style.color[2],
                            ]
                        } else {
                            FLOOR
                        };
                        c.set(qx, qy, col);
                    }
                }
            }
        }
        let cell = |(x, y): (usize, usize)| ((OFFSET + x * CELL) as i64, (OFFSET + y * CELL) as i64);
        let (gx, gy) = cell(self.layout.goal);
        c.rect(gx, gy, CELL as i64, CELL as i64, GOAL_COLOR);
        let (ax, ay) = cell(self.agent);
        c.rect(ax, ay, CELL as i64, CELL as i64, AGENT_COLOR);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_connects_all_rooms() {
        for seed in 0..30 {
            let l = MazeLayout::generate(seed, SparseLevel::VerySparse);
            assert_eq!(l.doors.len(), 8);
            let d = room_distances(&l.doors, 0);
            assert!(d.iter().all(|&v| v != usize::MAX));
            assert_eq!(l.start_room, 0);
            assert_eq!(d[l.goal_room], *d.iter().max().unwrap());
        }
    }

    #[test]
    fn sparse_start_is_three_doorways_from_goal() {
        for seed in 0..30 {
            let l = MazeLayout::generate(seed, SparseLevel::Sparse);
            let d = room_distances(&l.doors, l.goal_room);
            let far = room_distances(&l.doors, 0)[l.goal_room];
            assert_eq!(d[l.start_room], far.min(SPARSE_DISTANCE));
        }
    }

    #[test]
    fn solution_reaches_goal() {
        for seed in 0..30 {
            for level in [SparseLevel::Sparse, SparseLevel::VerySparse] {
                let mut m = SparseMaze::new(EnvConfig::maze(seed, level));
                let path = m.layout.solution();
                assert!(!path.is_empty());
                let mut success = false;
                for a in path {
                    success = m.advance(a).success;
                }
                assert!(success);
                assert_eq!(m.agent, m.layout.goal);
            }
        }
    }

    #[test]
    fn texture_drifts_only_in_the_occupied_room() {
        let mut m = SparseMaze::new(EnvConfig::maze(4, SparseLevel::VerySparse));
        let r = m.layout.start_room;
        m.advance(0);
        for (k, &p) in m.phases.iter().enumerate() {
            if k == r {
                assert_eq!(p, m.layout.styles[r].velocity);
            } else {
                assert_eq!(p, (0, 0));
            }
        }
    }
}
