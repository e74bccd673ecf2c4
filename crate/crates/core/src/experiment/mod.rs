//! Experiment configuration and the commands behind the CLI.

mod commands;
mod config;
mod run;
mod sweep;

pub use commands::{
    cmd_evaluate, cmd_profile, cmd_sweep, cmd_train_anchors, cmd_train_curve, method_slug, write_train_log,
    AnchorManifest,
};
pub use config::{
    apply_env_overrides, DataConfig, DatasetSpec, ExperimentConfig, InferenceConfig, NetworkConfig, ProfileConfig,
};
pub use run::{anchor_seed, build_curve, evaluate_curve, inference_grid, train_anchor, train_anchors};
pub use sweep::{aggregate, run_seed, run_sweep, run_sweep_with, MeanStd, SweepOutcome, SweepRow, SweepRun};

use crate::Error;

/// Process exit status for an error: 2 for usage and configuration
/// problems (including missing inputs), 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::MissingFile(_) => 2,
        _ => 1,
    }
}
