//! Experiment driver: noise calibration, rule-based references, resumable
//! training cells, grid search and report tables.

mod baseline;
mod config;
mod experiment;
mod metrics;

pub use baseline::{
    calibrate_noise, mean_stderr, measure_rule_based, BaselineCache, CalibrationPoint, RuleBasedEstimate,
    RULE_CONFIRM_THRESHOLD,
};
pub use config::{ExperimentConfig, ExperimentSettings, Scale, NOISE_GRID, TARGET_RULE_SUCCESS};
pub use experiment::{
    cells, eval_dst, evaluate_saved_policy, gen_corpus, grid_search, load_corpus, load_dst, load_policy, load_run, load_runs, full_grids,
    read_references, references, report, resolve_noise, run_cell, run_experiment, select_best, train_dst_stage,
    Artifacts, Cell, GridCell, NoiseRecord,
};
pub use metrics::{
    algorithm_name, checkpoint_at, dialogs_to_beat, dialogs_to_beat_length, BeatStat, MetricsRow, MetricsTable, Stat,
};
