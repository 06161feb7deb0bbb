//! Experiment orchestration: configuration, seeded trial execution, KPI
//! aggregation and export, paired comparisons, convergence detection and
//! offline pretraining.

mod compare;
mod config;
mod convergence;
mod pretrain;
mod runner;

pub use compare::{compare, compare_results, paired_difference, CompareReport, ConfigStats, PairedComparison, PairedDifference};
pub use config::{ExperimentConfig, Hyper, LabelSource, OptimizerKind, PredictorConfig, PretrainConfig};
pub use convergence::{
    convergence_report, mean_curve, read_episode_curves, ConvergenceReport, DEFAULT_TOLERANCE, DEFAULT_WINDOW,
    MIN_EPISODES,
};
pub use pretrain::{
    generate_corrector_dataset, pretrain_agents, pretrain_corrector, pretrain_seed, write_corrector_curve,
    AgentPretrain, AgentSummary, CorrectorPretrain, CorrectorSummary, PretrainTarget, PRETRAIN_SALT,
};
pub use runner::{
    build_controller, corrector_from_layers, episode_csv_line, frame_csv_line, mean_std, run_experiment,
    run_experiment_with, run_trial, write_episode_csv, write_frame_csv, write_outputs, EpisodeAccumulator,
    EpisodeMetrics, EpisodeRunner, ExperimentResult, FrameRow, MeanStd, Resources, RunOptions, Summary,
    TrialResult, TrialSummary, CONTROL_STREAM, EPISODE_HEADER, FRAME_HEADER, INIT_STREAM, SIM_STREAM,
    TRAFFIC_STREAM,
};
