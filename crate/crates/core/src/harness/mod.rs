//! Run configuration, checkpoints and the multi-arm experiment driver.

mod checkpoint;
mod config;
mod experiment;
mod io;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{RunConfig, SEED_ENV};
pub use experiment::{
    analyze_state, eval_set, prepare_base, probe_batches, run_arm, run_arms, write_run, Analysis, Base,
    RunOutcome, CHECKPOINT_FILE, METRICS_FILE,
};
pub use io::write_atomic;
