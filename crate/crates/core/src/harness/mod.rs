//! Experiment orchestration: configuration, training, evaluation,
//! comparison, reports and the gradient audit.

pub mod audit;
mod config;
mod report;
mod train;

pub use config::{
    build_data, prepare_data, DatasetConfig, ExperimentConfig, ModelGrid, PreparedData,
    SyntheticSection, TrainingConfig,
};
pub use report::{
    compare, decode_runs, default_direction, emit_report, encode_runs, read_runs, report_table,
    write_outputs, write_runs, write_timings, Comparison, ReportRow, ReportTable, Summary,
    REPORT_TSV, REPORT_TXT, RUNS_FILE, SIGNIFICANCE_LEVEL, TIMINGS_FILE,
};
pub use train::{
    build_model, evaluate_part, predict_part, run_experiment, run_experiment_on, train_run,
    EpochRecord, PartEvaluation, RunArtifact, RunStatus, RunTimings, Validation,
};
