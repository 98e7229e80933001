//! Seeded teacher-student experiments and their machine-readable outputs.
//!
//! Every output is a pure function of the [`ExperimentConfig`]; per-seed
//! runs execute in parallel and are reassembled in config order.

mod config;
mod output;
mod run;

pub use config::{ExperimentConfig, TaskKind};
pub use output::{
    emit_comparison, emit_outputs, metrics_csv, summarize, OutputFiles, SeedLoss, Summary, METRICS_HEADER,
    SUITE_VERSION,
};
pub use run::{
    compare_schemes, frame_robustness, generate_task, run_experiment, run_experiment_threads, run_seed, run_with,
    Comparison, FrameRobustness, LossStats, MetricsRecord, RunResult, SeedFailure, SeedOutcome, Task, Teacher,
};
