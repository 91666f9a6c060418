//! Experiment configuration, seeded training runs, logging, checkpoints,
//! probes, heatmaps and evaluation.

pub mod checkpoint;
pub mod config;
pub mod decay;
pub mod eval;
pub mod probe;
pub mod run;
pub mod runlog;

pub use checkpoint::{checkpoint_bytes, checkpoint_load, checkpoint_read, checkpoint_save};
pub use config::{CuriosityKind, CuriositySection, EnvSection, ExperimentConfig, RunSection};
pub use decay::{run_decay, DecayConfig, DecayReport, DecayRow};
pub use eval::{evaluate_policy, uniform_policy_eval, EvalReport};
pub use probe::{emit_flowloss_heatmap, probe_novelty, read_pair_dir, replicate_frame, write_pair_dir};
pub use run::{
    continue_seed, init_seed, probe_losses, run_experiment, run_experiment_with, train_iteration,
    uniform_reference_return, ExperimentReport, SeedReport, SeedState,
};
pub use runlog::{emit_curve_csv, mean_curve, parse_curve_csv, CurveRow, ProbeRow, RunLog};
