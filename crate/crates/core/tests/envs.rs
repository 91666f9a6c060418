use std::collections::{HashMap, VecDeque};

use ficm::envs::{
    action_space, observation_shape, reset, ColorMode, Drifters, Env, EnvConfig, MazeLayout, SparseLevel,
};
use ficm::pnm::{read_image, write_image};
use ficm_numerics::Rng;

fn drifters(seed: u64) -> (Drifters, EnvConfig) {
    let cfg = EnvConfig::drifters(seed);
    match reset(&cfg).unwrap().0 {
        Env::Drifters(d) => (d, cfg),
        _ => unreachable!(),
    }
}

fn overlaps(a: (i64, i64), sa: i64, b: (i64, i64), sb: i64) -> bool {
    a.0 < b.0 + sb && b.0 < a.0 + sa && a.1 < b.1 + sb && b.1 < a.1 + sa
}

fn random_actions(seed: u64, n: usize, a: usize) -> Vec<usize> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.below(a)).collect()
}

#[test]
fn same_seed_gives_identical_trajectories() {
    for cfg in [EnvConfig::drifters(3), EnvConfig::maze(3, SparseLevel::VerySparse)] {
        let actions = random_actions(11, 300, action_space(&cfg));
        let run = || {
            let (mut env, o0) = reset(&cfg).unwrap();
            let mut trace = vec![(o0, 0.0, false)];
            for &a in &actions {
                if env.is_terminal() {
                    env.reset_episode();
                }
                let s = env.step(a).unwrap();
                trace.push((s.observation, s.extrinsic_reward, s.done));
            }
            trace
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn different_seeds_give_different_layouts() {
    let a = reset(&EnvConfig::drifters(1)).unwrap().1;
    let b = reset(&EnvConfig::drifters(2)).unwrap().1;
    assert_ne!(a, b);
}

#[test]
fn observations_stay_in_unit_range_with_fixed_shape() {
    for color in [ColorMode::Rgb, ColorMode::Gray] {
        for mut cfg in [EnvConfig::drifters(5), EnvConfig::maze(5, SparseLevel::Sparse)] {
            cfg.color = color;
            cfg.auto_reset = true;
            let shape = observation_shape(&cfg);
            let (mut env, o) = reset(&cfg).unwrap();
            assert_eq!(o.shape(), &shape);
            for a in random_actions(2, 400, action_space(&cfg)) {
                let o = env.step(a).unwrap().observation;
                assert_eq!(o.shape(), &shape);
                assert!(o.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}

/// Triangle wave between `lo` and `hi` with the given phase, written from
/// the path description rather than the implementation.
fn bounce(lo: i64, hi: i64, phase: i64, t: i64) -> i64 {
    let span = hi - lo;
    let u = (phase + t).rem_euclid(2 * span);
    if u <= span {
        lo + u
    } else {
        hi - (u - span)
    }
}

#[test]
fn drone_positions_follow_the_path_formula() {
    for seed in 0..10 {
        let (d, _) = drifters(seed);
        for t in [0u64, 1, 17, 250, 1001] {
            for path in &d.drones {
                let s = bounce(path.lo, path.hi, path.phase, t as i64);
                let want = if path.horizontal { (s, path.lane) } else { (path.lane, s) };
                assert_eq!(path.position(t), want, "seed {seed} t {t}");
            }
        }
        assert_eq!(
            d.drone_positions(),
            d.drones.iter().map(|p| p.position(0)).collect::<Vec<_>>()
        );
    }
}

#[test]
fn noop_changes_only_drone_pixels() {
    for seed in 0..10 {
        let (d, cfg) = drifters(seed);
        let (mut env, mut prev) = reset(&cfg).unwrap();
        for t in 0..60u64 {
            let next = env.step(0).unwrap().observation;
            let before = d.drones.iter().map(|p| p.position(t)).collect::<Vec<_>>();
            let after = d.drones.iter().map(|p| p.position(t + 1)).collect::<Vec<_>>();
            for y in 0..42i64 {
                for x in 0..42i64 {
                    let changed = (0..3).any(|c| {
                        let i = (c * 42 * 42 + y * 42 + x) as usize;
                        prev.data()[i] != next.data()[i]
                    });
                    if changed {
                        let on_drone = before.iter().chain(&after).any(|&p| overlaps((x, y), 1, p, 3));
                        assert!(on_drone, "seed {seed} t {t}: pixel ({x},{y}) changed off any drone");
                    }
                }
            }
            prev = next;
        }
    }
}

#[test]
fn consecutive_drifters_frames_differ_in_at_least_nine_pixels() {
    for seed in 0..10 {
        let mut cfg = EnvConfig::drifters(seed);
        cfg.auto_reset = true;
        let (mut env, mut prev) = reset(&cfg).unwrap();
        let mut actions = random_actions(seed, 600, 5);
        actions[..100].iter_mut().for_each(|a| *a = 0);
        for a in actions {
            let next = env.step(a).unwrap().observation;
            let differing = (0..42 * 42)
                .filter(|&p| (0..3).any(|c| prev.data()[c * 1764 + p] != next.data()[c * 1764 + p]))
                .count();
            assert!(differing >= 9, "seed {seed}: only {differing} pixels differ");
            prev = next;
        }
    }
}

const MOVES: [(i64, i64); 5] = [(0, 0), (0, -2), (0, 2), (-2, 0), (2, 0)];

/// Breadth-first search over (position, time) for an action sequence from
/// the start that lands on pellet `target` without touching a drone.
fn pellet_route(d: &Drifters, target: usize, horizon: u64) -> Option<Vec<usize>> {
    let (xmin, ymin, max) = Drifters::agent_bounds();
    let (asz, psz) = (Drifters::agent_size(), Drifters::pellet_size());
    let start = Drifters::start();
    let mut parent: HashMap<((i64, i64), u64), (((i64, i64), u64), usize)> = HashMap::new();
    let mut q = VecDeque::from([(start, 0u64)]);
    while let Some((p, t)) = q.pop_front() {
        if t > 0 && overlaps(p, asz, d.pellets[target], psz) {
            let mut actions = Vec::new();
            let mut cur = (p, t);
            while let Some(&(prev, a)) = parent.get(&cur) {
                actions.push(a);
                cur = prev;
            }
            actions.reverse();
            return Some(actions);
        }
        if t == horizon {
            continue;
        }
        for (a, (dx, dy)) in MOVES.iter().enumerate() {
            let n = ((p.0 + dx).clamp(xmin, max), (p.1 + dy).clamp(ymin, max));
            let key = (n, t + 1);
            if d.drone_hits(n, asz, t + 1) || parent.contains_key(&key) || key == (start, 0) {
                continue;
            }
            parent.insert(key, ((p, t), a));
            q.push_back(key);
        }
    }
    None
}

#[test]
fn every_pellet_has_a_scripted_route() {
    for seed in 0..8 {
        let (d, cfg) = drifters(seed);
        for target in 0..d.pellets.len() {
            let route = pellet_route(&d, target, 200).unwrap_or_else(|| panic!("seed {seed} pellet {target}"));
            let (mut env, _) = reset(&cfg).unwrap();
            let mut total = 0.0;
            for a in route {
                let s = env.step(a).unwrap();
                assert!(!s.done, "seed {seed} pellet {target}: route ended early");
                total += s.extrinsic_reward;
            }
            let Env::Drifters(after) = &env else { unreachable!() };
            assert!(after.collected[target] && total >= 1.0);
        }
    }
}

fn maze_route(layout: &MazeLayout) -> Vec<usize> {
    let n = MazeLayout::grid();
    let mut prev = vec![None; n * n];
    let mut q = VecDeque::from([layout.start]);
    let mut seen = vec![false; n * n];
    seen[layout.start.1 * n + layout.start.0] = true;
    while let Some((x, y)) = q.pop_front() {
        for (a, (dx, dy)) in [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)].iter().enumerate() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || layout.is_wall(nx as usize, ny as usize) {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !seen[ny * n + nx] {
                seen[ny * n + nx] = true;
                prev[ny * n + nx] = Some(((x, y), a));
                q.push_back((nx, ny));
            }
        }
    }
    let mut out = Vec::new();
    let mut c = layout.goal;
    while let Some((p, a)) = prev[c.1 * n + c.0] {
        out.push(a);
        c = p;
    }
    out.reverse();
    out
}

#[test]
fn maze_goal_is_reachable_by_a_scripted_route() {
    for level in [SparseLevel::Sparse, SparseLevel::VerySparse] {
        for seed in 0..10 {
            let cfg = EnvConfig::maze(seed, level);
            let Env::SparseMaze(m) = reset(&cfg).unwrap().0 else { unreachable!() };
            let route = maze_route(&m.layout);
            assert!(!route.is_empty());
            let (mut env, _) = reset(&cfg).unwrap();
            let last = route.len() - 1;
            for (i, a) in route.into_iter().enumerate() {
                let s = env.step(a).unwrap();
                assert_eq!(s.done, i == last);
                if i == last {
                    assert_eq!(s.extrinsic_reward, 1.0);
                    assert!(s.info.success);
                }
            }
        }
    }
}

#[test]
fn maze_levels_place_the_start_at_the_documented_distance() {
    for seed in 0..20 {
        let sparse = MazeLayout::generate(seed, SparseLevel::Sparse);
        let very = MazeLayout::generate(seed, SparseLevel::VerySparse);
        assert_eq!(sparse.room_distance(), 3);
        assert!(very.room_distance() >= sparse.room_distance());
    }
}

#[test]
fn random_policy_rarely_solves_the_very_sparse_maze() {
    let cfg = EnvConfig::maze(0, SparseLevel::VerySparse);
    let (mut env, _) = reset(&cfg).unwrap();
    let mut rng = Rng::new(99);
    let mut successes = 0;
    for _ in 0..1000 {
        env.reset_episode();
        loop {
            let s = env.step(rng.below(4)).unwrap();
            if s.done {
                successes += usize::from(s.info.success);
                break;
            }
        }
    }
    assert!(successes < 20, "random policy solved {successes}/1000 episodes");
}

#[test]
fn terminal_env_refuses_to_step_unless_auto_resetting() {
    let cfg = EnvConfig::maze(1, SparseLevel::Sparse);
    let Env::SparseMaze(m) = reset(&cfg).unwrap().0 else { unreachable!() };
    let route = maze_route(&m.layout);
    let (mut env, _) = reset(&cfg).unwrap();
    for &a in &route {
        env.step(a).unwrap();
    }
    assert!(env.is_terminal() && env.step(0).is_err());

    let mut auto = cfg.clone();
    auto.auto_reset = true;
    let (mut env, o0) = reset(&auto).unwrap();
    let mut last = None;
    for &a in &route {
        last = Some(env.step(a).unwrap());
    }
    let last = last.unwrap();
    assert!(!last.done && last.info.episode_over && last.info.success);
    assert_eq!(last.observation, o0);
    assert!(env.step(0).is_ok());
}

#[test]
fn episode_cap_ends_the_episode() {
    let mut cfg = EnvConfig::drifters(0);
    cfg.max_steps = 7;
    let (mut env, _) = reset(&cfg).unwrap();
    let mut done_at = None;
    for i in 1..=7 {
        let s = env.step(0).unwrap();
        if s.done {
            done_at = Some(i);
            break;
        }
    }
    assert!(done_at.is_some_and(|i| i <= 7));
}

#[test]
fn observation_dump_round_trips_through_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let (_, o) = reset(&EnvConfig::drifters(4)).unwrap();
    let p = dir.path().join("frame.ppm");
    write_image(&p, &o).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert!(bytes.starts_with(b"P6"));
    let back = read_image(&p).unwrap();
    assert_eq!(back.shape(), o.shape());
    assert!(back.max_abs_diff(&o) <= 0.5 / 255.0 + 1e-6);
}
