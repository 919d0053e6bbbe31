//! Library surface behind the `marginlab` binary: run configuration,
//! command implementations, and artifact emission. Exists as a lib so the
//! acceptance and integration suites can drive commands in-process.

pub mod artifacts;
pub mod commands;
pub mod config;

pub use commands::{
    cmd_compare, cmd_gen_data, cmd_gradcheck, cmd_oracle_sweep, cmd_score, cmd_sweep_alpha,
    cmd_train, ScoreData,
};
pub use config::{DatasetSpec, LrSpec, ModelSpec, RunConfig, SplitSpec, TrainSpec};
