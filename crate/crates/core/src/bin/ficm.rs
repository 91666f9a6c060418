use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ficm::curiosity::FicmState;
use ficm::envs::{ColorMode, Observation};
use ficm::flowpredictor::Variant;
use ficm::harness::checkpoint::checkpoint_read;
use ficm::harness::run::{continue_seed, prepare_out_dir};
use ficm::harness::{
    checkpoint_load, emit_flowloss_heatmap, probe_novelty, read_pair_dir, replicate_frame, run_decay,
    run_experiment_with, DecayConfig, ExperimentConfig,
};
use ficm::pnm::read_image;
use ficm::{Error, Result};

#[derive(Parser)]
#[command(name = "ficm", version, about = "Flow-based curiosity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write curves, probes, heatmaps and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        timesteps: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Continue from a checkpoint written under the same config (needs --seed).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score every NNN_a / NNN_b image pair in a directory with a trained flow predictor.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Write the per-pixel flow loss of one image pair as a graymap.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frame_a: PathBuf,
        #[arg(long)]
        frame_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a flow predictor on one fixed Drifters trajectory and log probe losses.
    Decay {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VariantArg::C)]
        variant: VariantArg,
        #[arg(long, value_enum, default_value_t = ColorArg::Rgb)]
        color: ColorArg,
        #[arg(long, default_value_t = 1)]
        frames_per_input: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        minibatch: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    S,
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorArg {
    Rgb,
    Gray,
}

fn ficm_of(path: &PathBuf) -> Result<FicmState<f32>> {
    let (_, state) = checkpoint_read(path)?;
    state
        .generator
        .ficm()
        .cloned()
        .ok_or_else(|| Error::WrongKind(format!("{} holds no flow predictor", path.display())))
}

/// Single frames become model inputs by repeating them when the predictor
/// expects stacked frames.
fn as_input(state: &FicmState<f32>, img: &Observation) -> Result<Observation> {
    let p = &state.config.predictor;
    if img.shape()[0] != p.channels_per_frame {
        return Err(Error::InvalidInput(format!(
            "image has {} channels, model expects {}",
            img.shape()[0],
            p.channels_per_frame
        )));
    }
    Ok(replicate_frame(img, p.frames_per_input))
}

fn run(config: PathBuf, seed: Option<u64>, timesteps: Option<usize>, out_dir: Option<PathBuf>, resume: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.run.seeds = vec![s];
    }
    if let Some(t) = timesteps {
        cfg.run.total_timesteps = t;
    }
    if let Some(d) = out_dir {
        cfg.run.out_dir = d;
    }
    cfg.validate()?;
    let mut progress = |seed: u64, u: usize, total: usize, row: &ficm::harness::CurveRow| {
        eprintln!(
            "seed {seed} update {u}/{total} t={} ext={:.4} int={:.6} loss={:.6} ent={:.4}",
            row.timestep, row.ext_return_mean, row.int_reward_mean, row.curiosity_loss, row.entropy
        );
    };
    match resume {
        None => {
            let report = run_experiment_with(&cfg, &mut progress)?;
            println!("wrote {}", report.out_dir.display());
        }
        Some(path) => {
            if seed.is_none() {
                return Err(Error::InvalidInput("--resume needs --seed".into()));
            }
            prepare_out_dir(&cfg)?;
            let state = checkpoint_load(&cfg, &path)?;
            if Some(state.seed) != seed {
                return Err(Error::InvalidInput(format!("checkpoint is for seed {}", state.seed)));
            }
            let (report, _) = continue_seed(&cfg, state, &mut progress)?;
            println!("wrote {}", report.final_checkpoint.display());
        }
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            timesteps,
            out_dir,
            resume,
        } => run(config, seed, timesteps, out_dir, resume),
        Command::Probe { checkpoint, pairs } => {
            let state = ficm_of(&checkpoint)?;
            let loaded = read_pair_dir(&pairs)?;
            let inputs = loaded
                .iter()
                .map(|(_, a, b)| Ok((as_input(&state, a)?, as_input(&state, b)?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = inputs.iter().map(|(a, b)| (a, b)).collect();
            let losses = probe_novelty(&state, &refs)?;
            println!("pair,flow_loss");
            for ((path, _, _), l) in loaded.iter().zip(losses) {
                println!("{},{l:.10e}", path.display());
            }
            Ok(())
        }
        Command::Heatmap {
            checkpoint,
            frame_a,
            frame_b,
            out,
        } => {
            let state = ficm_of(&checkpoint)?;
            let a = as_input(&state, &read_image(&frame_a)?)?;
            let b = as_input(&state, &read_image(&frame_b)?)?;
            emit_flowloss_heatmap(&state, (&a, &b), &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Decay {
            seed,
            variant,
            color,
            frames_per_input,
            steps,
            minibatch,
            out_dir,
        } => {
            let cfg = DecayConfig {
                seed,
                variant: match variant {
                    VariantArg::S => Variant::S,
                    VariantArg::C => Variant::C,
                },
                color: match color {
                    ColorArg::Rgb => ColorMode::Rgb,
                    ColorArg::Gray => ColorMode::Gray,
                },
                frames_per_input,
                train_steps: steps,
                minibatch,
                out_dir: Some(out_dir),
                ..DecayConfig::default()
            };
            let report = run_decay(&cfg)?;
            let last = report.last();
            println!(
                "familiar {:.6} -> {:.6}, held-out {:.6}",
                report.initial_familiar(),
                last.familiar_mean,
                last.heldout_mean
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
