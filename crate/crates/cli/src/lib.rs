//! Experiment harness for the replicated simulation engine: single runs,
//! reliability curves and parameter sweeps, all emitting machine-readable
//! CSV (plus a JSON-lines event log for runs).

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{
    execute, reliability_table, run_simulation, sweep_rows, Cli, Command, ModelArg,
    ReliabilityArgs, ReliabilityAxis, RunArgs, SweepArgs, SweepAxis,
};
pub use config::{LoadedRun, RunConfigFile};
pub use output::{RowParams, RUN_CSV_HEADER};
