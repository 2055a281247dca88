//! Experiment workflow behind the command-line tool: dataset generation,
//! training, evaluation, offset export and sweeps.

mod commands;
mod config;

pub use commands::{
    cmd_eval, cmd_generate, cmd_offsets, cmd_sweep, cmd_train, Console, SweepKind, TrainOutcome,
    CLASSIFIER_BIN, CONFIG_FILE, TRACE_CSV,
};
pub use config::{EvalConfig, ExperimentConfig, SweepConfig};
