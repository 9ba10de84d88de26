//! Configuration, pipeline commands, and experiment reporting.

mod commands;
mod config;
mod report;

pub use commands::{
    cmd_record_expert, cmd_run, cmd_train_expert, parse_expert_record, ExpertTrainOutcome,
    RecordOutcome, RunOutcome,
};
pub use config::{Algorithm, CliOverrides, RunConfig};
pub use report::{
    build_report, compare_runs, format_report, load_run_curve, write_report, ExperimentReport,
    LabelReport, RunCurve,
};
