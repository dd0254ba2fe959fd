//! Multi-seed experiments: configuration, per-trial records, aggregation and sweeps.

mod aggregate;
mod config;
mod estimation;
mod run;
mod sweep;
mod verify;

pub use aggregate::{
    aggregate, aggregate_csv_record, format_row, write_aggregate_csv, AggregateRow, Summary, AGGREGATE_CSV_HEADER,
};
pub use config::{
    parse_override, preset, AgentKind, BackendConfig, BackendKind, ConfigFile, ExperimentConfig, CONFIG_KEYS, PRESETS,
};
pub use estimation::{
    estimation_error_experiment, fit_line, EstimationConfig, EstimationRow, EstimationTable, Estimator,
};
pub use run::{
    load_records, run_experiment, run_trial, save_records, ReferenceSource, RunRecord, RunStatus, SCHEMA_VERSION,
};
pub use sweep::{
    difficulty_tasks, run_sweep, sweep_settings, task_difficulty_sweep, SweepKind, SweepRow, DIFFICULTY_TASKS,
    ROLLOUT_COUNTS, UCRL_DELTAS,
};
pub use verify::{
    verify_environment, verify_records, CheckOutcome, HistogramBin, VerifyReport, Violation, INVARIANTS, VERIFY_TOL,
};
