//! Experiment configuration, the command implementations behind the CLI and
//! report aggregation.

mod commands;
mod config;
mod report;

pub use commands::{
    cmd_eval_place, cmd_eval_recon, cmd_generate, cmd_place, cmd_train_policy, cmd_train_recon, evaluate_reconstructor,
    exit_code, load_agent, load_data, placement_errors, EvalRow, LoadedData, PlaceEvalRow, Placement, PlacementFile,
    PlacementRow, PolicyLogRow, RunContext, TrainRow,
};
pub use config::{file_hash, short_hash, EvalConfig, ExperimentConfig, PlacementConfig, PlacementMethod};
pub use report::{cmd_report, LongRow, ReportSummary};
