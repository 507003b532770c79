//! Configuration, seeding, training and experiment orchestration.

mod agent;
pub mod commands;
mod config;
mod experiments;
mod output;
pub mod seeding;
mod train;

pub use agent::{make_env, AnyEnv, Checkpoint, Decision, GreedyPolicy, Model};
pub use config::{
    apply_overrides, load_config, save_config, EvalConfig, ExperimentConfig, RunConfig,
    TrainConfig, ENV_PREFIX,
};
pub use experiments::{
    pareto_projection, pareto_sweep, run_ablations, run_suite, simplex_grid, suite_agents,
    sweep_history, sweep_hparams, train_seeds, write_sweep, write_table, Ablation, ParetoResult,
    RunSet, SeedRun, SweepRow, REGIMES,
};
pub use output::{
    load_checkpoint, read_manifest, revision, save_checkpoint, write_train_log, OutputDir,
    RunManifest, MANIFEST,
};
pub use train::{
    eval_episode_seeds, evaluate_model, train_agent, train_dpi, EvalPoint, TrainOptions,
    TrainOutcome, UpdateStats,
};
