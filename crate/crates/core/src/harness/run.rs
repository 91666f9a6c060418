//! Seeded training runs: rollout, generator update and PPO update per
//! iteration, with curve, probe, heatmap, checkpoint and evaluation output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ficm_numerics::{AdamState, Rng};
use serde::{Deserialize, Serialize};

use super::checkpoint::checkpoint_save;
use super::config::{CuriosityKind, ExperimentConfig};
use super::eval::{evaluate_policy, EvalReport};
use super::probe::{emit_flowloss_heatmap, probe_novelty};
use super::runlog::{emit_curve_csv, emit_probe_csv, mean_curve, CurveRow, ProbeRow, RunLog};
use crate::agent::{
    collect_rollout, make_workers, normalize_advantages, ppo_update, sample_action, PolicyConfig,
    PolicyParams, RewardShaping, RolloutSpec, Worker,
};
use crate::curiosity::{
    BaselineConfig, BaselineKind, BaselineState, FicmConfig, FicmState, Generator, TransitionRefs,
};
use crate::envs::{action_space, observation_shape, Observation};
use crate::error::{io_err, Result};
use crate::flowpredictor::PredictorConfig;

/// Everything needed to continue a seed exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedState {
    pub seed: u64,
    /// Completed policy updates.
    pub update: usize,
    pub policy: PolicyParams<f32>,
    pub policy_adam: AdamState<f32>,
    pub generator: Generator,
    pub shaping: RewardShaping,
    pub workers: Vec<Worker>,
    pub rollout_rng: Rng,
    pub ppo_rng: Rng,
    pub curiosity_rng: Rng,
    pub eval_rng: Rng,
    pub last_ext_return: f64,
    /// Fixed pairs captured before training.
    pub probes: Vec<(Observation, Observation)>,
    pub log: RunLog,
    /// Checksum of the generator's frozen networks at initialisation.
    pub frozen_checksum_start: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub log: RunLog,
    pub eval: EvalReport,
    pub frozen_checksum_start: u64,
    pub frozen_checksum_end: u64,
    pub final_checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub seeds: Vec<SeedReport>,
    pub mean: Vec<CurveRow>,
}

/// Progress callback: `(seed, completed updates, total updates, last row)`.
pub type Progress<'a> = &'a mut dyn FnMut(u64, usize, usize, &CurveRow);

fn curiosity_frames(cfg: &ExperimentConfig) -> usize {
    cfg.curiosity.frames_per_input
}

fn rollout_spec(cfg: &ExperimentConfig) -> RolloutSpec {
    RolloutSpec {
        horizon: cfg.ppo.rollout_len,
        policy_frames: cfg.ppo.frame_stack,
        curiosity_frames: curiosity_frames(cfg),
    }
}

/// Fresh generator for `cfg`.
pub fn build_generator(cfg: &ExperimentConfig, seed: u64, rng: &mut Rng) -> Result<Generator> {
    let env = cfg.env_config(seed);
    let [c, h, w] = observation_shape(&env);
    let k = curiosity_frames(cfg);
    let baseline = |kind| {
        let mut b = BaselineConfig::new(kind, [c * k, h, w], action_space(&env));
        b.lr = cfg.curiosity.lr;
        b
    };
    Ok(match cfg.curiosity.kind {
        CuriosityKind::None => Generator::None,
        CuriosityKind::FicmS | CuriosityKind::FicmC => {
            let variant = cfg.curiosity.kind.ficm_variant().expect("ficm kind");
            let mut f = FicmConfig::new(PredictorConfig::new(variant, c, k));
            f.beta = cfg.curiosity.beta;
            f.zeta = cfg.curiosity.zeta();
            f.lr = cfg.curiosity.lr;
            Generator::Ficm(FicmState::new(f, rng)?)
        }
        CuriosityKind::Rf => Generator::Baseline(BaselineState::new(baseline(BaselineKind::Rf), rng)?),
        CuriosityKind::Idf => Generator::Baseline(BaselineState::new(baseline(BaselineKind::Idf), rng)?),
        CuriosityKind::Rnd => Generator::Baseline(BaselineState::new(baseline(BaselineKind::Rnd), rng)?),
    })
}

fn frozen_checksum(g: &Generator) -> u64 {
    g.baseline().map_or(0, |b| b.frozen_checksum())
}

/// Consecutive curiosity inputs from a uniform-random policy, one every
/// `stride` steps.
pub fn capture_probes(
    cfg: &ExperimentConfig,
    seed: u64,
    count: usize,
    stride: usize,
    rng: &mut Rng,
) -> Result<Vec<(Observation, Observation)>> {
    let mut env = cfg.env_config(seed);
    env.auto_reset = true;
    let k = curiosity_frames(cfg);
    let mut w = Worker::new(&env, k)?;
    let a = action_space(&env);
    let mut out = Vec::with_capacity(count);
    let mut t = 0;
    while out.len() < count {
        let before = w.stacked(k);
        let step = w.env.step(rng.below(a))?;
        w.push_frame(step.observation);
        t += 1;
        if t % stride.max(1) == 0 {
            out.push((before, w.stacked(k)));
        }
    }
    Ok(out)
}

/// Initial state of one seed. Independent random streams feed policy
/// initialisation, generator initialisation, action sampling, PPO
/// shuffling, generator minibatching, probe capture and evaluation.
pub fn init_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedState> {
    cfg.validate()?;
    let root = Rng::new(seed);
    let env = cfg.env_config(seed);
    let [c, h, w] = observation_shape(&env);
    let policy = PolicyParams::init(
        PolicyConfig::new([c * cfg.ppo.frame_stack, h, w], action_space(&env)),
        &mut root.split(1),
    )?;
    let policy_adam = AdamState::new(&policy.store, cfg.ppo.lr);
    let generator = build_generator(cfg, seed, &mut root.split(2))?;
    let probes = if matches!(generator, Generator::None) {
        Vec::new()
    } else {
        capture_probes(cfg, seed, cfg.run.probe_pairs, 7, &mut root.split(6))?
    };
    let depth = cfg.ppo.frame_stack.max(curiosity_frames(cfg));
    Ok(SeedState {
        seed,
        update: 0,
        policy,
        policy_adam,
        frozen_checksum_start: frozen_checksum(&generator),
        generator,
        shaping: RewardShaping::new(
            cfg.curiosity.reward_mode,
            cfg.curiosity.zeta(),
            cfg.curiosity.normalize(),
        ),
        workers: make_workers(&env, cfg.ppo.workers, depth)?,
        rollout_rng: root.split(3),
        ppo_rng: root.split(4),
        curiosity_rng: root.split(5),
        eval_rng: root.split(7),
        last_ext_return: 0.0,
        probes,
        log: RunLog::default(),
    })
}

/// Novelty of the stored probes under the current generator: flow loss for
/// FICM, prediction error for the baselines.
pub fn probe_losses(state: &SeedState) -> Result<Vec<f64>> {
    let refs: Vec<(&Observation, &Observation)> = state.probes.iter().map(|(a, b)| (a, b)).collect();
    match &state.generator {
        Generator::None => Ok(Vec::new()),
        Generator::Ficm(f) => probe_novelty(f, &refs),
        g => g.unscaled_rewards(&TransitionRefs {
            current: refs.iter().map(|p| p.0).collect(),
            actions: vec![0; refs.len()],
            next: refs.iter().map(|p| p.1).collect(),
        }),
    }
}

/// One rollout, generator epoch and PPO update. Returns the logged row.
pub fn train_iteration(cfg: &ExperimentConfig, st: &mut SeedState) -> Result<CurveRow> {
    let mode = cfg.curiosity.reward_mode;
    let batch = collect_rollout(
        &st.policy,
        &mut st.workers,
        &st.generator,
        &mut st.shaping,
        rollout_spec(cfg),
        &mut st.rollout_rng,
    )?;
    let transitions = batch.curiosity_transitions(!mode.hides_episode_ends());
    let curiosity_loss = st.generator.train_epoch(
        &transitions,
        cfg.run.curiosity_minibatch,
        cfg.run.curiosity_samples,
        &mut st.curiosity_rng,
    )?;
    let (mut adv, ret) = batch.advantages(mode, &cfg.ppo)?;
    normalize_advantages(&mut adv);
    let pb = batch.ppo_batch(adv, ret);
    let diag = ppo_update(&mut st.policy, &mut st.policy_adam, &pb, &cfg.ppo, &mut st.ppo_rng)?;
    if !batch.episode_returns.is_empty() {
        st.last_ext_return =
            batch.episode_returns.iter().sum::<f64>() / batch.episode_returns.len() as f64;
    }
    st.update += 1;
    let row = CurveRow {
        timestep: (st.update * cfg.ppo.batch_size()) as u64,
        ext_return_mean: st.last_ext_return,
        int_reward_mean: batch.int_rewards.iter().sum::<f64>() / batch.len() as f64,
        curiosity_loss,
        entropy: diag.entropy,
        clip_frac: diag.clip_frac,
    };
    st.log.rows.push(row);
    Ok(row)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed{seed}"))
}

pub fn curve_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("curve_seed{seed}.csv"))
}

fn due(update: usize, interval: usize, last: bool) -> bool {
    last || (interval > 0 && update % interval == 0)
}

/// Trains one seed from `state` until the configured budget and writes its
/// artifacts. Returns the report and the final state.
pub fn continue_seed(
    cfg: &ExperimentConfig,
    mut st: SeedState,
    progress: Progress<'_>,
) -> Result<(SeedReport, SeedState)> {
    let out = &cfg.run.out_dir;
    let dir = seed_dir(out, st.seed);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let total = cfg.updates();
    if st.update == 0 && st.log.probes.is_empty() && !st.probes.is_empty() {
        let losses = probe_losses(&st)?;
        st.log.probes.push(ProbeRow { timestep: 0, losses });
    }
    while st.update < total {
        let row = train_iteration(cfg, &mut st)?;
        let u = st.update;
        let last = u == total;
        if !st.probes.is_empty() && due(u, cfg.run.probe_interval, last) {
            let losses = probe_losses(&st)?;
            st.log.probes.push(ProbeRow {
                timestep: row.timestep,
                losses,
            });
        }
        if let (Some(f), Some((a, b))) = (st.generator.ficm(), st.probes.first()) {
            if due(u, cfg.run.heatmap_interval, last) {
                emit_flowloss_heatmap(f, (a, b), &dir.join(format!("heatmap_u{u:05}.pgm")))?;
            }
        }
        if due(u, cfg.run.checkpoint_interval, false) && !last {
            checkpoint_save(cfg, &st, &dir.join(format!("checkpoint_u{u:05}.ckpt")))?;
        }
        progress(st.seed, u, total, &row);
    }
    let final_checkpoint = dir.join("checkpoint_final.ckpt");
    checkpoint_save(cfg, &st, &final_checkpoint)?;
    emit_curve_csv(&st.log.rows, &curve_path(out, st.seed))?;
    emit_probe_csv(&st.log.probes, &dir.join("probes.csv"))?;
    let env = cfg.env_config(st.seed);
    let mut eval_rng = st.eval_rng.clone();
    let eval = if cfg.run.eval_episodes > 0 {
        evaluate_policy(&st.policy, &env, cfg.ppo.frame_stack, cfg.run.eval_episodes, &mut eval_rng)?
    } else {
        EvalReport::default()
    };
    let report = SeedReport {
        seed: st.seed,
        log: st.log.clone(),
        eval,
        frozen_checksum_start: st.frozen_checksum_start,
        frozen_checksum_end: frozen_checksum(&st.generator),
        final_checkpoint,
    };
    Ok((report, st))
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Echoes the config and checks the output directory is writable.
pub fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let out = &cfg.run.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let p = out.join("config.toml");
    fs::write(&p, cfg.to_toml()).map_err(io_err(&p))
}

fn write_metadata(cfg: &ExperimentConfig, started: u64) -> Result<()> {
    let p = cfg.run.out_dir.join("metadata.toml");
    let text = format!(
        "started_unix = {started}\nfinished_unix = {}\npackage_version = \"{}\"\n\n{}",
        unix_seconds(),
        env!("CARGO_PKG_VERSION"),
        cfg.to_toml()
    );
    fs::write(&p, text).map_err(io_err(&p))
}

pub fn write_summary(out: &Path, seeds: &[SeedReport]) -> Result<()> {
    let p = out.join("summary.csv");
    let mut text = String::from(
        "seed,final_ext_return,eval_episodes,eval_success_rate,eval_mean_return,frozen_checksum_start,frozen_checksum_end\n",
    );
    for s in seeds {
        let fin = s.log.rows.last().map_or(0.0, |r| r.ext_return_mean);
        text.push_str(&format!(
            "{},{:.8},{},{:.8},{:.8},{:016x},{:016x}\n",
            s.seed,
            fin,
            s.eval.episodes,
            s.eval.success_rate,
            s.eval.mean_return,
            s.frozen_checksum_start,
            s.frozen_checksum_end
        ));
    }
    fs::write(&p, text).map_err(io_err(&p))
}

/// Runs every seed in order and writes per-seed and mean curves.
pub fn run_experiment_with(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<ExperimentReport> {
    prepare_out_dir(cfg)?;
    let started = unix_seconds();
    let mut seeds = Vec::new();
    for &seed in &cfg.run.seeds {
        let st = init_seed(cfg, seed)?;
        let (report, _) = continue_seed(cfg, st, progress)?;
        seeds.push(report);
    }
    let curves: Vec<Vec<CurveRow>> = seeds.iter().map(|s| s.log.rows.clone()).collect();
    let mean = mean_curve(&curves);
    let out = &cfg.run.out_dir;
    emit_curve_csv(&mean, &out.join("curve_mean.csv"))?;
    write_summary(out, &seeds)?;
    write_metadata(cfg, started)?;
    Ok(ExperimentReport {
        out_dir: out.clone(),
        seeds,
        mean,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, &mut |_, _, _, _| {})
}

/// Mean extrinsic return of a uniform-random policy run for `steps` steps
/// with silent restarts, the reference for curiosity-only training.
pub fn uniform_reference_return(cfg: &ExperimentConfig, seed: u64, steps: usize) -> Result<f64> {
    let mut env = cfg.env_config(seed);
    env.auto_reset = true;
    let mut w = Worker::new(&env, 1)?;
    let a = action_space(&env);
    let mut rng = Rng::new(seed).split(8);
    let uniform = vec![1.0 / a as f64; a];
    let (mut ret, mut sum, mut n) = (0.0, 0.0, 0usize);
    for _ in 0..steps {
        let s = w.env.step(sample_action(&uniform, rng.uniform()))?;
        ret += s.extrinsic_reward;
        if s.info.episode_over {
            sum += ret;
            n += 1;
            ret = 0.0;
        }
    }
    Ok(if n == 0 { ret } else { sum / n as f64 })
}
